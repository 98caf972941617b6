//! Grid transfer between nested levels: canonical Raviart-Thomas
//! interpolation for the fluxes, exact polynomial injection for the
//! potentials, restriction by transposition. On nested spaces the
//! prolongation of a coarse function reproduces it exactly.

use crate::element::CellGeometry;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::layout::FieldLayout;
use crate::linalg::csr::Csr;
use crate::mesh::{Mesh, MeshHierarchy};
use crate::quadrature::TriangleRule;

/// Prolongations for one species of each field, coarse -> fine.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub p_rt: Csr,
    pub p_dg: Csr,
}

/// Evaluates all coarse RT basis functions of `coarse_cell` at a physical
/// point, returning physical (Piola-mapped, sign-corrected) values.
fn coarse_basis_at(
    coarse_layout: &FieldLayout,
    coarse_cell: usize,
    geo: &CellGeometry,
    phys: Vec2,
) -> Vec<Vec2> {
    let ref_pt = geo.pull(phys);
    let tab = coarse_layout.rt.tabulate(&[ref_pt]);
    let signs = &coarse_layout.cell_dof_signs[coarse_cell];
    (0..coarse_layout.rt.dim)
        .map(|b| geo.piola(tab.values[b][0]) * signs[b])
        .collect()
}

/// Builds the transfer between `level` and `level + 1` of the hierarchy.
/// Both layouts must discretize the same number of species at the same
/// degree.
pub fn build_transfer(
    hierarchy: &MeshHierarchy,
    level: usize,
    coarse_layout: &FieldLayout,
    fine_layout: &FieldLayout,
) -> Result<Transfer> {
    if coarse_layout.degree != fine_layout.degree
        || coarse_layout.n_species != fine_layout.n_species
    {
        return Err(Error::LevelMismatch(format!(
            "layouts disagree: degree {} vs {}, species {} vs {}",
            coarse_layout.degree,
            fine_layout.degree,
            coarse_layout.n_species,
            fine_layout.n_species
        )));
    }
    let coarse = &hierarchy.levels[level];
    let fine = &hierarchy.levels[level + 1];
    let k = fine_layout.degree;
    let rt_dim = fine_layout.rt.dim;

    // Fluxes: for each fine cell, apply the fine dual functionals to every
    // coarse basis function of the parent cell. Shared fine edges receive
    // identical values from both sides (normal-trace continuity), so plain
    // overwrites are consistent.
    let mut rt_entries: Vec<(usize, usize, f64)> = Vec::new();
    for fc in 0..fine.n_cells() {
        let pc = hierarchy.parents[level].cell_parent[fc];
        let coarse_geo = CellGeometry::from_cell(coarse, pc);
        let fine_geo = CellGeometry::from_cell(fine, fc);
        let coarse_dofs = coarse_layout.cell_flux_dofs(coarse, 0, pc);
        let dofs = fine_layout.rt.interpolate_many(rt_dim, |xhat| {
            let phys = fine_geo.map(xhat);
            coarse_basis_at(coarse_layout, pc, &coarse_geo, phys)
                .into_iter()
                .map(|v| fine_geo.piola_pull(v))
                .collect()
        });
        let signs = &fine_layout.cell_dof_signs[fc];
        for (b, &coarse_dof) in coarse_dofs.iter().enumerate() {
            for (l, &edge) in fine.cell_edges[fc].iter().enumerate() {
                for j in 0..k {
                    let fine_dof = edge * k + j;
                    let v = signs[l * k + j] * dofs[b][l * k + j];
                    if v.abs() > 1e-14 {
                        rt_entries.push((fine_dof, coarse_dof, v));
                    }
                }
            }
            for t in 0..fine_layout.rt.interior_dofs {
                let fine_dof =
                    fine.n_edges() * k + fc * fine_layout.rt.interior_dofs + t;
                let v = dofs[b][3 * k + t];
                if v.abs() > 1e-14 {
                    rt_entries.push((fine_dof, coarse_dof, v));
                }
            }
        }
    }
    // Interior fine edges are visited from both adjacent fine cells with
    // equal moments (normal-trace continuity); average the duplicates.
    let p_rt = dedupe_mean(
        fine_layout.rt_per_species,
        coarse_layout.rt_per_species,
        &rt_entries,
    )?;

    // Potentials: L2 projection per fine cell of the parent's polynomial,
    // which is exact injection for nested spaces.
    let rule = TriangleRule::with_exactness(2 * k + 2);
    let dg_dim = fine_layout.dg.dim;
    let dg_vals = fine_layout.dg.tabulate(&rule.points);
    let mut mass = nalgebra::DMatrix::zeros(dg_dim, dg_dim);
    for t in 0..dg_dim {
        for u in 0..dg_dim {
            let mut acc = 0.0;
            for q in 0..rule.len() {
                acc += rule.weights[q] * dg_vals[t][q] * dg_vals[u][q];
            }
            mass[(t, u)] = acc;
        }
    }
    let mass_inv = mass.try_inverse().expect("reference DG mass");
    let mut dg_entries: Vec<(usize, usize, f64)> = Vec::new();
    for fc in 0..fine.n_cells() {
        let pc = hierarchy.parents[level].cell_parent[fc];
        let coarse_geo = CellGeometry::from_cell(coarse, pc);
        let fine_geo = CellGeometry::from_cell(fine, fc);
        for u in 0..dg_dim {
            let mut rhs = nalgebra::DVector::zeros(dg_dim);
            for q in 0..rule.len() {
                let phys = fine_geo.map(rule.points[q]);
                let coarse_val = coarse_layout.dg.eval_basis(u, coarse_geo.pull(phys));
                for t in 0..dg_dim {
                    rhs[t] += rule.weights[q] * dg_vals[t][q] * coarse_val;
                }
            }
            let coeffs = &mass_inv * rhs;
            for t in 0..dg_dim {
                if coeffs[t].abs() > 1e-14 {
                    dg_entries.push((fc * dg_dim + t, pc * dg_dim + u, coeffs[t]));
                }
            }
        }
    }
    let p_dg = Csr::from_triplets(
        fine_layout.dg_per_species,
        coarse_layout.dg_per_species,
        &dg_entries,
    )?;

    Ok(Transfer { p_rt, p_dg })
}

/// Builds a CSR where duplicate (row, col) pushes are averaged rather than
/// summed; used for the edge dofs written from both adjacent cells.
fn dedupe_mean(n_rows: usize, n_cols: usize, entries: &[(usize, usize, f64)]) -> Result<Csr> {
    let mut map: std::collections::BTreeMap<(usize, usize), (f64, usize)> =
        std::collections::BTreeMap::new();
    for &(r, c, v) in entries {
        let e = map.entry((r, c)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let reduced: Vec<(usize, usize, f64)> = map
        .into_iter()
        .map(|((r, c), (sum, count))| (r, c, sum / count as f64))
        .collect();
    Csr::from_triplets(n_rows, n_cols, &reduced)
}

/// Expands the per-species transfers into one monolithic prolongation over
/// all fields, species-major.
pub fn monolithic_prolongation(
    transfer: &Transfer,
    coarse_layout: &FieldLayout,
    fine_layout: &FieldLayout,
) -> Result<Csr> {
    let n = fine_layout.n_species;
    let fine_total = fine_layout.total;
    let coarse_total = coarse_layout.total;
    let mut entries = Vec::with_capacity(n * (transfer.p_rt.nnz() + transfer.p_dg.nnz()));
    for s in 0..n {
        let fo = fine_layout.flux_offset(s);
        let co = coarse_layout.flux_offset(s);
        for r in 0..transfer.p_rt.n_rows {
            let (cols, vals) = transfer.p_rt.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                entries.push((fo + r, co + c, v));
            }
        }
        let fo = fine_layout.mu_offset(s);
        let co = coarse_layout.mu_offset(s);
        for r in 0..transfer.p_dg.n_rows {
            let (cols, vals) = transfer.p_dg.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                entries.push((fo + r, co + c, v));
            }
        }
    }
    Csr::from_triplets(fine_total, coarse_total, &entries)
}

/// Per-cell divergence map: RT coefficients to the DG coefficients of the
/// divergence, exact because `div RT_k` lies in `DG_{k-1}`.
pub fn divergence_map(mesh: &Mesh, layout: &FieldLayout) -> Result<Csr> {
    let rule = TriangleRule::with_exactness(2 * layout.degree + 2);
    let tab = layout.rt.tabulate(&rule.points);
    let dg_vals = layout.dg.tabulate(&rule.points);
    let dg_dim = layout.dg.dim;
    let mut mass = nalgebra::DMatrix::zeros(dg_dim, dg_dim);
    for t in 0..dg_dim {
        for u in 0..dg_dim {
            let mut acc = 0.0;
            for q in 0..rule.len() {
                acc += rule.weights[q] * dg_vals[t][q] * dg_vals[u][q];
            }
            mass[(t, u)] = acc;
        }
    }
    let mass_inv = mass.try_inverse().expect("reference DG mass");
    let mut entries = Vec::new();
    for cell in 0..mesh.n_cells() {
        let geo = CellGeometry::from_cell(mesh, cell);
        let signs = &layout.cell_dof_signs[cell];
        let dofs = layout.cell_flux_dofs(mesh, 0, cell);
        for (b, &dof) in dofs.iter().enumerate() {
            let mut rhs = nalgebra::DVector::zeros(dg_dim);
            for q in 0..rule.len() {
                rhs += nalgebra::DVector::from_fn(dg_dim, |t, _| {
                    rule.weights[q] * dg_vals[t][q] * tab.divs[b][q] * signs[b]
                });
            }
            let coeffs = &mass_inv * rhs / geo.det;
            for t in 0..dg_dim {
                if coeffs[t].abs() > 1e-14 {
                    entries.push((cell * dg_dim + t, dof, coeffs[t]));
                }
            }
        }
    }
    Csr::from_triplets(layout.dg_per_species, layout.rt_per_species, &entries)
}

/// Meshes, layouts, and transfers for a whole hierarchy; built once per
/// experiment cell and shared across nonlinear iterations.
pub struct LevelStack {
    pub hierarchy: MeshHierarchy,
    pub layouts: Vec<FieldLayout>,
    pub transfers: Vec<Transfer>,
    /// Monolithic prolongations per level pair.
    pub prolongations: Vec<Csr>,
}

impl LevelStack {
    pub fn build(
        hierarchy: MeshHierarchy,
        n_species: usize,
        degree: usize,
        neumann_tags: &[Vec<crate::mesh::BoundaryTag>],
    ) -> Result<LevelStack> {
        let layouts: Vec<FieldLayout> = hierarchy
            .levels
            .iter()
            .map(|mesh| crate::layout::build_layout(mesh, n_species, degree, neumann_tags))
            .collect::<Result<_>>()?;
        let mut transfers = Vec::new();
        let mut prolongations = Vec::new();
        for l in 0..hierarchy.n_levels() - 1 {
            let t = build_transfer(&hierarchy, l, &layouts[l], &layouts[l + 1])?;
            prolongations.push(monolithic_prolongation(&t, &layouts[l], &layouts[l + 1])?);
            transfers.push(t);
        }
        Ok(LevelStack {
            hierarchy,
            layouts,
            transfers,
            prolongations,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.hierarchy.n_levels()
    }

    pub fn finest_layout(&self) -> &FieldLayout {
        self.layouts.last().unwrap()
    }

    pub fn finest_mesh(&self) -> &Mesh {
        self.hierarchy.finest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{flux_value_local, interpolate_flux, mu_value_local, project_mu};
    use crate::layout::build_layout;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn stack(m: usize, k: usize) -> LevelStack {
        let hierarchy = MeshHierarchy::unit_square(m);
        LevelStack::build(hierarchy, 1, k, &[vec![]]).unwrap()
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let hierarchy = MeshHierarchy::unit_square(1);
        let a = build_layout(&hierarchy.levels[0], 1, 1, &[vec![]]).unwrap();
        let b = build_layout(&hierarchy.levels[1], 1, 2, &[vec![]]).unwrap();
        assert!(build_transfer(&hierarchy, 0, &a, &b).is_err());
    }

    #[test]
    fn constant_fields_are_reproduced() {
        for k in 1..=2 {
            let s = stack(1, k);
            let coarse = interpolate_flux(&s.hierarchy.levels[0], &s.layouts[0], &|_| {
                Vec2::new(0.8, -0.4)
            });
            let fine_direct = interpolate_flux(&s.hierarchy.levels[1], &s.layouts[1], &|_| {
                Vec2::new(0.8, -0.4)
            });
            let mut fine = vec![0.0; s.layouts[1].rt_per_species];
            s.transfers[0].p_rt.matvec(&coarse, &mut fine);
            for (a, b) in fine.iter().zip(&fine_direct) {
                assert!((a - b).abs() < 1e-11, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn prolongation_is_exact_on_nested_spaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..=3 {
            let s = stack(1, k);
            let coarse_mesh = &s.hierarchy.levels[0];
            let fine_mesh = &s.hierarchy.levels[1];
            let xc: Vec<f64> = (0..s.layouts[0].rt_per_species)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut xf = vec![0.0; s.layouts[1].rt_per_species];
            s.transfers[0].p_rt.matvec(&xc, &mut xf);
            // Compare pointwise at interior points of random fine cells.
            for _ in 0..20 {
                let fc = rng.gen_range(0..fine_mesh.n_cells());
                let p = Vec2::new(rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.4));
                let fine_geo = CellGeometry::from_cell(fine_mesh, fc);
                let phys = fine_geo.map(p);
                let vf = flux_value_local(fine_mesh, &s.layouts[1], &xf, fc, p);
                let pc = s.hierarchy.parents[0].cell_parent[fc];
                let coarse_geo = CellGeometry::from_cell(coarse_mesh, pc);
                let vc = flux_value_local(
                    coarse_mesh,
                    &s.layouts[0],
                    &xc,
                    pc,
                    coarse_geo.pull(phys),
                );
                assert!(
                    (vf - vc).norm() < 1e-10,
                    "k={k} cell {fc}: {vf:?} vs {vc:?}"
                );
            }

            // Potentials likewise.
            let mc: Vec<f64> = (0..s.layouts[0].dg_per_species)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut mf = vec![0.0; s.layouts[1].dg_per_species];
            s.transfers[0].p_dg.matvec(&mc, &mut mf);
            for _ in 0..20 {
                let fc = rng.gen_range(0..fine_mesh.n_cells());
                let p = Vec2::new(rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.4));
                let fine_geo = CellGeometry::from_cell(fine_mesh, fc);
                let phys = fine_geo.map(p);
                let pc = s.hierarchy.parents[0].cell_parent[fc];
                let coarse_geo = CellGeometry::from_cell(coarse_mesh, pc);
                let vf = mu_value_local(&s.layouts[1], &mf, fc, p);
                let vc = mu_value_local(&s.layouts[0], &mc, pc, coarse_geo.pull(phys));
                assert!((vf - vc).abs() < 1e-11, "k={k}: {vf} vs {vc}");
            }
        }
    }

    #[test]
    fn divergence_commutes_with_prolongation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 1..=2 {
            let s = stack(1, k);
            let div_c = divergence_map(&s.hierarchy.levels[0], &s.layouts[0]).unwrap();
            let div_f = divergence_map(&s.hierarchy.levels[1], &s.layouts[1]).unwrap();
            let xc: Vec<f64> = (0..s.layouts[0].rt_per_species)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            // div_f(P_rt x) vs P_dg(div_c x).
            let mut px = vec![0.0; s.layouts[1].rt_per_species];
            s.transfers[0].p_rt.matvec(&xc, &mut px);
            let mut left = vec![0.0; s.layouts[1].dg_per_species];
            div_f.matvec(&px, &mut left);
            let mut dc = vec![0.0; s.layouts[0].dg_per_species];
            div_c.matvec(&xc, &mut dc);
            let mut right = vec![0.0; s.layouts[1].dg_per_species];
            s.transfers[0].p_dg.matvec(&dc, &mut right);
            for (a, b) in left.iter().zip(&right) {
                assert!((a - b).abs() < 1e-10, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn restriction_is_the_transpose() {
        let s = stack(1, 2);
        let p = &s.transfers[0].p_rt;
        let r = p.transpose();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..p.n_cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..p.n_rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut px = vec![0.0; p.n_rows];
        p.matvec(&x, &mut px);
        let mut rty = vec![0.0; r.n_rows];
        r.matvec(&y, &mut rty);
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&rty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn projection_reproduces_polynomials() {
        // L2 projection onto DG_{k-1} is exact for polynomials of degree
        // k-1; checked through the projection helper used by the tests.
        let mesh = MeshHierarchy::unit_square(1).levels[1].clone();
        for k in 1..=3usize {
            let layout = build_layout(&mesh, 1, k, &[vec![]]).unwrap();
            let d = (k - 1) as i32;
            let field = |p: Vec2| 0.3 + p.x.powi(d) - 0.5 * p.y.powi(d);
            let coeffs = project_mu(&mesh, &layout, &field);
            for cell in [0usize, 3, 5] {
                let p = Vec2::new(0.21, 0.17);
                let geo = CellGeometry::from_cell(&mesh, cell);
                let v = mu_value_local(&layout, &coeffs, cell, p);
                assert!((v - field(geo.map(p))).abs() < 1e-11);
            }
        }
    }
}
