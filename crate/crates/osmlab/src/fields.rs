//! Pointwise evaluation of discrete fields and the frozen-coefficient state
//! handles consumed by assembly.

use crate::element::CellGeometry;
use crate::error::Result;
use crate::geom::Vec2;

use crate::layout::FieldLayout;
use crate::mesh::{Mesh, MeshHierarchy};
use crate::physics::{concentrations_from_potentials, normalize_concentrations, MixtureSpec};
use crate::problem::ScalarField;

/// Potential of one species at a reference point of `cell`.
pub fn mu_value(
    layout: &FieldLayout,
    x: &[f64],
    species: usize,
    cell: usize,
    ref_pt: Vec2,
) -> f64 {
    let mut acc = 0.0;
    for t in 0..layout.dg.dim {
        acc += x[layout.mu_dof(species, cell, t)] * layout.dg.eval_basis(t, ref_pt);
    }
    acc
}

/// Like [`mu_value`] but for a single species' coefficient slice.
pub fn mu_value_local(layout: &FieldLayout, x: &[f64], cell: usize, ref_pt: Vec2) -> f64 {
    let mut acc = 0.0;
    for t in 0..layout.dg.dim {
        acc += x[cell * layout.dg.dim + t] * layout.dg.eval_basis(t, ref_pt);
    }
    acc
}

/// Like [`flux_value`] but for a single species' coefficient slice.
pub fn flux_value_local(
    mesh: &Mesh,
    layout: &FieldLayout,
    x: &[f64],
    cell: usize,
    ref_pt: Vec2,
) -> Vec2 {
    let geo = CellGeometry::from_cell(mesh, cell);
    let tab = layout.rt.tabulate(&[ref_pt]);
    let signs = &layout.cell_dof_signs[cell];
    let k = layout.degree;
    let mut vhat = Vec2::ZERO;
    for (l, &edge) in mesh.cell_edges[cell].iter().enumerate() {
        for j in 0..k {
            vhat = vhat + tab.values[l * k + j][0] * (signs[l * k + j] * x[edge * k + j]);
        }
    }
    for t in 0..layout.rt.interior_dofs {
        let dof = mesh.n_edges() * k + cell * layout.rt.interior_dofs + t;
        vhat = vhat + tab.values[3 * k + t][0] * x[dof];
    }
    geo.piola(vhat)
}

/// Mass flux of one species at a reference point of `cell`, mapped with the
/// contravariant Piola transform and the cell's orientation signs.
pub fn flux_value(
    mesh: &Mesh,
    layout: &FieldLayout,
    x: &[f64],
    species: usize,
    cell: usize,
    ref_pt: Vec2,
) -> Vec2 {
    let geo = CellGeometry::from_cell(mesh, cell);
    let tab = layout.rt.tabulate(&[ref_pt]);
    let dofs = layout.cell_flux_dofs(mesh, species, cell);
    let signs = &layout.cell_dof_signs[cell];
    let mut vhat = Vec2::ZERO;
    for (local, &dof) in dofs.iter().enumerate() {
        vhat = vhat + tab.values[local][0] * (signs[local] * x[dof]);
    }
    geo.piola(vhat)
}

/// Divergence of the mass flux at a reference point of `cell`.
pub fn flux_divergence(
    mesh: &Mesh,
    layout: &FieldLayout,
    x: &[f64],
    species: usize,
    cell: usize,
    ref_pt: Vec2,
) -> f64 {
    let geo = CellGeometry::from_cell(mesh, cell);
    let tab = layout.rt.tabulate(&[ref_pt]);
    let dofs = layout.cell_flux_dofs(mesh, species, cell);
    let signs = &layout.cell_dof_signs[cell];
    let mut div = 0.0;
    for (local, &dof) in dofs.iter().enumerate() {
        div += tab.divs[local][0] * signs[local] * x[dof];
    }
    geo.piola_div(div)
}

/// Canonical interpolation of a vector field into one species' RT space:
/// per-cell reference interpolation of the Piola pullback, mapped to global
/// coefficients through the orientation signs. Conforming fields give the
/// same edge moments from either side, so plain overwrites are consistent.
pub fn interpolate_flux(
    mesh: &Mesh,
    layout: &FieldLayout,
    field: &dyn Fn(Vec2) -> Vec2,
) -> Vec<f64> {
    let k = layout.degree;
    let mut out = vec![0.0; layout.rt_per_species];
    for cell in 0..mesh.n_cells() {
        let geo = CellGeometry::from_cell(mesh, cell);
        let local = layout
            .rt
            .interpolate(|xhat| geo.piola_pull(field(geo.map(xhat))));
        let signs = &layout.cell_dof_signs[cell];
        for (l, &edge) in mesh.cell_edges[cell].iter().enumerate() {
            for j in 0..k {
                out[edge * k + j] = signs[l * k + j] * local[l * k + j];
            }
        }
        for t in 0..layout.rt.interior_dofs {
            out[mesh.n_edges() * k + cell * layout.rt.interior_dofs + t] = local[3 * k + t];
        }
    }
    out
}

/// Per-cell L2 projection of a scalar field onto one species' DG space.
pub fn project_mu(mesh: &Mesh, layout: &FieldLayout, field: &dyn Fn(Vec2) -> f64) -> Vec<f64> {
    let rule = crate::quadrature::TriangleRule::with_exactness(2 * layout.degree + 2);
    let dg_vals = layout.dg.tabulate(&rule.points);
    let d = layout.dg.dim;
    let mut mass = nalgebra::DMatrix::zeros(d, d);
    for t in 0..d {
        for u in 0..d {
            let mut acc = 0.0;
            for q in 0..rule.len() {
                acc += rule.weights[q] * dg_vals[t][q] * dg_vals[u][q];
            }
            mass[(t, u)] = acc;
        }
    }
    let mass_inv = mass.try_inverse().expect("DG mass invertible");
    let mut out = vec![0.0; layout.dg_per_species];
    for cell in 0..mesh.n_cells() {
        let geo = CellGeometry::from_cell(mesh, cell);
        let mut rhs = nalgebra::DVector::zeros(d);
        for q in 0..rule.len() {
            let value = field(geo.map(rule.points[q]));
            for t in 0..d {
                rhs[t] += rule.weights[q] * dg_vals[t][q] * value;
            }
        }
        let coeffs = &mass_inv * rhs;
        for t in 0..d {
            out[cell * d + t] = coeffs[t];
        }
    }
    out
}

/// How assembly obtains the frozen (or current) thermodynamic state and,
/// for Newton coupling terms, the current fluxes on the assembly level.
pub enum AssemblyState<'a> {
    /// Spatially uniform concentrations.
    Uniform { c: &'a [f64] },
    /// Coefficients live on the assembly level itself.
    SameLevel {
        x: &'a [f64],
        /// `Some(p)`: rescale to satisfy the equation of state pointwise.
        normalize_to: Option<f64>,
    },
    /// Coefficients live on a finer level of the hierarchy; evaluation
    /// descends to the containing fine cell, which is exact on nested
    /// affine meshes.
    FineLevel {
        hierarchy: &'a MeshHierarchy,
        fine_layout: &'a FieldLayout,
        fine_level: usize,
        assembly_level: usize,
        x: &'a [f64],
        normalize_to: Option<f64>,
    },
    /// Closed-form concentrations, e.g. a manufactured solution.
    Exact { concentration: &'a ScalarField },
}

impl<'a> AssemblyState<'a> {
    /// Concentrations of every species at the given points of `cell`;
    /// `out[q][species]`. `ref_pts` are reference coordinates on the
    /// assembly-level cell, `phys_pts` their images.
    pub fn concentrations(
        &self,
        mesh: &Mesh,
        layout: &FieldLayout,
        spec: &MixtureSpec,
        cell: usize,
        ref_pts: &[Vec2],
        phys_pts: &[Vec2],
        out: &mut Vec<Vec<f64>>,
    ) -> Result<()> {
        out.clear();
        match self {
            AssemblyState::Uniform { c } => {
                for _ in 0..ref_pts.len() {
                    out.push(c.to_vec());
                }
            }
            AssemblyState::SameLevel { x, normalize_to } => {
                for &p in ref_pts {
                    let mu: Vec<f64> = (0..layout.n_species)
                        .map(|s| mu_value(layout, x, s, cell, p))
                        .collect();
                    let mut c = concentrations_from_potentials(&mu, spec)?;
                    if let Some(pressure) = normalize_to {
                        normalize_concentrations(&mut c, *pressure, spec)?;
                    }
                    out.push(c);
                }
            }
            AssemblyState::FineLevel {
                hierarchy,
                fine_layout,
                fine_level,
                assembly_level,
                x,
                normalize_to,
            } => {
                let fine_mesh = &hierarchy.levels[*fine_level];
                for &p in phys_pts {
                    let fc = hierarchy.locate_descendant(*assembly_level, cell, p, *fine_level);
                    let geo = CellGeometry::from_cell(fine_mesh, fc);
                    let rp = geo.pull(p);
                    let mu: Vec<f64> = (0..fine_layout.n_species)
                        .map(|s| mu_value(fine_layout, x, s, fc, rp))
                        .collect();
                    let mut c = concentrations_from_potentials(&mu, spec)?;
                    if let Some(pressure) = normalize_to {
                        normalize_concentrations(&mut c, *pressure, spec)?;
                    }
                    out.push(c);
                }
            }
            AssemblyState::Exact { concentration } => {
                for &p in phys_pts {
                    out.push(
                        (0..spec.n).map(|s| (concentration)(s, p)).collect(),
                    );
                }
            }
        }
        let _ = mesh;
        Ok(())
    }

    /// Current fluxes at the given points, `out[q][species]`; needed by the
    /// Newton coupling blocks when assembling on coarser levels. The
    /// same-level case is handled in the assembler itself, which already
    /// holds the physical basis tabulation.
    pub fn fluxes_cross_level(
        &self,
        cell: usize,
        phys_pts: &[Vec2],
        out: &mut Vec<Vec<Vec2>>,
    ) -> Option<()> {
        out.clear();
        match self {
            AssemblyState::FineLevel {
                hierarchy,
                fine_layout,
                fine_level,
                assembly_level,
                x,
                ..
            } => {
                let fine_mesh = &hierarchy.levels[*fine_level];
                for &p in phys_pts {
                    let fc = hierarchy.locate_descendant(*assembly_level, cell, p, *fine_level);
                    let geo = CellGeometry::from_cell(fine_mesh, fc);
                    let rp = geo.pull(p);
                    out.push(
                        (0..fine_layout.n_species)
                            .map(|s| flux_value(fine_mesh, fine_layout, x, s, fc, rp))
                            .collect(),
                    );
                }
                Some(())
            }
            _ => None,
        }
    }

    /// The coefficient vector when the state lives on the assembly level.
    pub fn same_level_coeffs(&self) -> Option<(&[f64], Option<f64>)> {
        match self {
            AssemblyState::SameLevel { x, normalize_to } => Some((x, *normalize_to)),
            _ => None,
        }
    }
}
