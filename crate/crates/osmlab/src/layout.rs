//! Global degree-of-freedom maps for the product space
//! `(RT_k)^n x (DG_{k-1})^n`, species-major, with the per-cell orientation
//! signs that make the mapped Raviart-Thomas bases H(div)-conforming.
//!
//! Numbering: all flux unknowns of species 0 (edge dofs by edge, then cell
//! interiors), then the remaining species, then all potential unknowns per
//! species. Within an edge the `k` dofs are Legendre moments of the normal
//! trace along the global lower-to-higher traversal.

use crate::element::{legendre, DgElement, RtElement};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};
use crate::problem::Problem;
use crate::quadrature::gauss_legendre_unit;
use std::ops::Range;

/// A field of the product space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    /// Mass flux of one species, an `RT_k` field.
    Flux(usize),
    /// Chemical potential of one species, a `DG_{k-1}` field.
    Potential(usize),
}

#[derive(Debug, Clone)]
pub struct FieldLayout {
    pub n_species: usize,
    pub degree: usize,
    pub rt: RtElement,
    pub dg: DgElement,
    pub n_edges: usize,
    pub n_cells: usize,
    /// Flux unknowns of one species.
    pub rt_per_species: usize,
    /// Potential unknowns of one species.
    pub dg_per_species: usize,
    pub total: usize,
    /// Orientation factor for every local RT dof of every cell: `+1` or the
    /// Legendre parity sign when the cell traverses the edge against its
    /// global direction. Interior dofs carry `+1`.
    pub cell_dof_signs: Vec<Vec<f64>>,
    /// Monolithic mask of essential (prescribed normal-trace) unknowns.
    pub essential: Vec<bool>,
    /// Boundary sides with essential flux conditions per species.
    pub neumann_tags: Vec<Vec<BoundaryTag>>,
}

impl FieldLayout {
    pub fn flux_offset(&self, species: usize) -> usize {
        species * self.rt_per_species
    }

    pub fn mu_offset(&self, species: usize) -> usize {
        self.n_species * self.rt_per_species + species * self.dg_per_species
    }

    pub fn flux_slice(&self, species: usize) -> Range<usize> {
        let o = self.flux_offset(species);
        o..o + self.rt_per_species
    }

    pub fn mu_slice(&self, species: usize) -> Range<usize> {
        let o = self.mu_offset(species);
        o..o + self.dg_per_species
    }

    pub fn flux_total(&self) -> usize {
        self.n_species * self.rt_per_species
    }

    /// Global index of flux dof `j` on `edge` for `species`.
    pub fn flux_edge_dof(&self, species: usize, edge: usize, j: usize) -> usize {
        self.flux_offset(species) + edge * self.degree + j
    }

    /// Global index of interior flux dof `t` of `cell`.
    pub fn flux_interior_dof(&self, species: usize, cell: usize, t: usize) -> usize {
        self.flux_offset(species)
            + self.n_edges * self.degree
            + cell * self.rt.interior_dofs
            + t
    }

    /// Global index of potential dof `t` of `cell`.
    pub fn mu_dof(&self, species: usize, cell: usize, t: usize) -> usize {
        self.mu_offset(species) + cell * self.dg.dim + t
    }

    /// Global flux dofs of a cell in local element order.
    pub fn cell_flux_dofs(&self, mesh: &Mesh, species: usize, cell: usize) -> Vec<usize> {
        let k = self.degree;
        let mut dofs = Vec::with_capacity(self.rt.dim);
        for &edge in &mesh.cell_edges[cell] {
            for j in 0..k {
                dofs.push(self.flux_edge_dof(species, edge, j));
            }
        }
        for t in 0..self.rt.interior_dofs {
            dofs.push(self.flux_interior_dof(species, cell, t));
        }
        dofs
    }

    pub fn cell_mu_dofs(&self, species: usize, cell: usize) -> Vec<usize> {
        (0..self.dg.dim).map(|t| self.mu_dof(species, cell, t)).collect()
    }

    /// Flux dofs of one species living on `edge`, relative to the species
    /// slice.
    pub fn edge_dofs_local(&self, edge: usize) -> Range<usize> {
        edge * self.degree..(edge + 1) * self.degree
    }

    pub fn n_essential(&self) -> usize {
        self.essential.iter().filter(|&&e| e).count()
    }
}

/// Builds the layout: numbering, orientation signs, and the essential mask
/// from the per-species sets of flux-condition boundary sides.
pub fn build_layout(
    mesh: &Mesh,
    n_species: usize,
    degree: usize,
    neumann_tags: &[Vec<BoundaryTag>],
) -> Result<FieldLayout> {
    if neumann_tags.len() != n_species {
        return Err(Error::invalid_argument(
            "need one set of boundary sides per species",
        ));
    }
    let rt = RtElement::new(degree)?;
    let dg = DgElement::new(degree - 1)?;
    let k = degree;
    let rt_per_species = mesh.n_edges() * k + mesh.n_cells() * rt.interior_dofs;
    let dg_per_species = mesh.n_cells() * dg.dim;
    let total = n_species * (rt_per_species + dg_per_species);

    // Orientation factor per local dof: reversing an edge flips its normal
    // and its parameter, so moment j picks up (-1)^(j+1).
    let mut cell_dof_signs = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        let mut signs = vec![1.0; rt.dim];
        for (l, &rev) in mesh.cell_edge_reversed[cell].iter().enumerate() {
            if rev {
                for j in 0..k {
                    signs[l * k + j] = if j % 2 == 0 { -1.0 } else { 1.0 };
                }
            }
        }
        cell_dof_signs.push(signs);
    }

    let layout_probe = FieldLayout {
        n_species,
        degree,
        rt,
        dg,
        n_edges: mesh.n_edges(),
        n_cells: mesh.n_cells(),
        rt_per_species,
        dg_per_species,
        total,
        cell_dof_signs,
        essential: vec![false; total],
        neumann_tags: neumann_tags.to_vec(),
    };

    let mut essential = vec![false; total];
    for (species, tags) in neumann_tags.iter().enumerate() {
        for (edge, tag) in mesh.boundary_tag.iter().enumerate() {
            if let Some(tag) = tag {
                if tags.contains(tag) {
                    for j in 0..k {
                        essential[layout_probe.flux_edge_dof(species, edge, j)] = true;
                    }
                }
            }
        }
    }

    Ok(FieldLayout {
        essential,
        ..layout_probe
    })
}

/// Interpolates the prescribed normal flux data onto the essential unknowns:
/// Legendre moments of `g` along each essential edge, with the sign relating
/// the outward normal to the global edge normal.
pub fn essential_values(mesh: &Mesh, layout: &FieldLayout, problem: &Problem) -> Vec<f64> {
    let k = layout.degree;
    let mut values = vec![0.0; layout.total];
    let (qs, qw) = gauss_legendre_unit(k + 2);
    for (edge, tag) in mesh.boundary_tag.iter().enumerate() {
        let Some(tag) = tag else { continue };
        let (cell, _) = mesh.edge_cells[edge];
        let local = mesh.local_edge_index(cell, edge);
        let sigma = mesh.orientation_sign(cell, local);
        let [u, v] = mesh.edges[edge];
        let (a, b) = (mesh.vertices[u], mesh.vertices[v]);
        let len = (b - a).norm();
        for species in 0..layout.n_species {
            if !layout.neumann_tags[species].contains(tag) {
                continue;
            }
            for j in 0..k {
                let mut acc = 0.0;
                for (&s, &w) in qs.iter().zip(&qw) {
                    let x = a + (b - a) * s;
                    acc += w * (problem.neumann_flux)(species, x) * legendre(j, 2.0 * s - 1.0);
                }
                values[layout.flux_edge_dof(species, edge, j)] = sigma * acc * len;
            }
        }
    }
    values
}
