//! Patch index sets for the Schwarz smoothers: per-species vertex stars for
//! the augmented flux blocks, and vertex Vanka patches coupling all fields
//! on the closure of the star.

use crate::error::{Error, Result};
use crate::layout::{Field, FieldLayout};
use crate::mesh::Mesh;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    VertexStar,
    VertexVanka,
}

/// Index sets into a layout's monolithic numbering, one patch per vertex.
/// Patches exclude essential unknowns; a vertex whose incident unknowns are
/// all essential yields an empty patch, which smoothers skip.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patches: Vec<Vec<usize>>,
    pub kind: PatchKind,
    pub level: usize,
}

impl PatchSet {
    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }
}

/// One patch per vertex containing the unknowns of a single field on the
/// entities incident to that vertex: edge and cell-interior flux dofs for a
/// flux field, cell dofs for a potential field.
pub fn vertex_star_patches(
    mesh: &Mesh,
    layout: &FieldLayout,
    field: Field,
    level: usize,
) -> Result<PatchSet> {
    let species = match field {
        Field::Flux(s) | Field::Potential(s) => s,
    };
    if species >= layout.n_species {
        return Err(Error::invalid_argument(format!(
            "field species {species} out of range"
        )));
    }
    let k = layout.degree;
    let mut patches = Vec::with_capacity(mesh.n_vertices());
    for v in 0..mesh.n_vertices() {
        let mut dofs = Vec::new();
        match field {
            Field::Flux(s) => {
                for &edge in &mesh.vertex_edges[v] {
                    for j in 0..k {
                        let dof = layout.flux_edge_dof(s, edge, j);
                        if !layout.essential[dof] {
                            dofs.push(dof);
                        }
                    }
                }
                for &cell in &mesh.vertex_cells[v] {
                    for t in 0..layout.rt.interior_dofs {
                        dofs.push(layout.flux_interior_dof(s, cell, t));
                    }
                }
            }
            Field::Potential(s) => {
                for &cell in &mesh.vertex_cells[v] {
                    for t in 0..layout.dg.dim {
                        dofs.push(layout.mu_dof(s, cell, t));
                    }
                }
            }
        }
        dofs.sort_unstable();
        dofs.dedup();
        patches.push(dofs);
    }
    Ok(PatchSet {
        patches,
        kind: PatchKind::VertexStar,
        level,
    })
}

/// One patch per vertex containing every field's unknowns on the closure of
/// the vertex star: all edges of the incident cells (spokes and ring) and
/// the incident cells themselves. Including the ring edges keeps the local
/// saddle-point problems nonsingular; the divergence rows of a patch whose
/// fluxes are all interior to it would otherwise share the constant
/// pressure nullspace of the continuous problem.
pub fn vertex_vanka_patches(mesh: &Mesh, layout: &FieldLayout, level: usize) -> Result<PatchSet> {
    let k = layout.degree;
    let n = layout.n_species;
    let mut patches = Vec::with_capacity(mesh.n_vertices());
    for v in 0..mesh.n_vertices() {
        let mut edges: BTreeSet<usize> = BTreeSet::new();
        for &cell in &mesh.vertex_cells[v] {
            for &e in &mesh.cell_edges[cell] {
                edges.insert(e);
            }
        }
        let mut dofs = Vec::new();
        for s in 0..n {
            for &edge in &edges {
                for j in 0..k {
                    let dof = layout.flux_edge_dof(s, edge, j);
                    if !layout.essential[dof] {
                        dofs.push(dof);
                    }
                }
            }
            for &cell in &mesh.vertex_cells[v] {
                for t in 0..layout.rt.interior_dofs {
                    dofs.push(layout.flux_interior_dof(s, cell, t));
                }
            }
        }
        for s in 0..n {
            for &cell in &mesh.vertex_cells[v] {
                for t in 0..layout.dg.dim {
                    dofs.push(layout.mu_dof(s, cell, t));
                }
            }
        }
        dofs.sort_unstable();
        dofs.dedup();
        patches.push(dofs);
    }
    Ok(PatchSet {
        patches,
        kind: PatchKind::VertexVanka,
        level,
    })
}
