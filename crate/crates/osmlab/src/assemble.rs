//! Assembly of the linearized saddle-point systems: the flux-flux transport
//! block, the divergence constraint, augmented Lagrangian terms, Newton
//! coupling blocks, boundary data, and right-hand sides.
//!
//! Conventions (all species-major, matching `FieldLayout`):
//!
//! - the monolithic operator is `[[A + AL, B^T + E + F], [B, 0]]`,
//! - `b(sigma, w) = -sum_i (1/M_i) (div sigma_i, w_i)`,
//! - the flux right-hand side is `(gamma/rho v_bulk, tau_i)` minus the
//!   Dirichlet boundary term `(1/M_i)(f_i, tau_i . n)` plus the augmented
//!   source `kappa_i (r_i, (1/M_i) div tau_i)`,
//! - the potential right-hand side is `-(r_i, w_i)`,
//! - essential (prescribed normal flux) unknowns are eliminated
//!   symmetrically, leaving identity rows.

use crate::element::CellGeometry;
use crate::error::{Error, Result};
use crate::fields::AssemblyState;
use crate::geom::Vec2;
use crate::layout::{essential_values, FieldLayout};
use crate::linalg::csr::Csr;
use crate::mesh::Mesh;
use crate::physics::{transport_coeffs, MixtureSpec, PointState};
use crate::problem::Problem;
use crate::quadrature::{gauss_legendre_unit, TriangleRule};
use nalgebra::DMatrix;

/// Per-cell inverse DG mass: the reference mass is shared, the cell factor
/// is the Jacobian determinant.
#[derive(Debug, Clone)]
pub struct DgMassInv {
    pub ref_mass: DMatrix<f64>,
    pub ref_mass_inv: DMatrix<f64>,
    pub cell_det: Vec<f64>,
    pub dg_dim: usize,
}

impl DgMassInv {
    /// `y = M_p^{-1} r` for one species slice.
    pub fn apply_inv(&self, r: &[f64], y: &mut [f64]) {
        let d = self.dg_dim;
        for (cell, &det) in self.cell_det.iter().enumerate() {
            let offset = cell * d;
            for t in 0..d {
                let mut acc = 0.0;
                for u in 0..d {
                    acc += self.ref_mass_inv[(t, u)] * r[offset + u];
                }
                y[offset + t] = acc / det;
            }
        }
    }
}

/// Assembled sparse blocks and the eliminated monolithic system.
pub struct BlockSystem {
    pub n_species: usize,
    pub flux_total: usize,
    pub dg_total: usize,
    /// Flux-flux transport block with full species coupling (no AL).
    pub a: Csr,
    /// Augmented Lagrangian block `diag(kappa) B^T M_p^{-1} B`, block
    /// diagonal over species.
    pub al: Csr,
    /// The divergence constraint block, rows indexed by potential unknowns.
    pub b: Csr,
    /// Newton coupling blocks `E + F` (flux rows, potential columns).
    pub ef: Option<Csr>,
    /// One species' DG mass matrix (they are identical across species).
    pub m_p: Csr,
    pub dg_mass: DgMassInv,
    /// Monolithic operator, essential-eliminated.
    pub matrix: Csr,
    /// Right-hand side after essential elimination.
    pub rhs: Vec<f64>,
    /// Right-hand side before elimination, for residual evaluation.
    pub rhs_raw: Vec<f64>,
    /// Per-species augmented flux blocks `A_ii + kappa_i B_i^T M_p^{-1} B_i`
    /// in species-local indexing, essential-eliminated.
    pub flux_blocks: Vec<Csr>,
    pub kappa: Vec<f64>,
    pub essential_mask: Vec<bool>,
    pub essential_vals: Vec<f64>,
}

impl BlockSystem {
    pub fn total(&self) -> usize {
        self.flux_total + self.dg_total
    }

    /// Residual of the nonlinear (or Picard) equations at `x`, using the raw
    /// blocks: `[(A + AL) x_J + B^T x_mu - rhs_J, B x_J - rhs_mu]`, with
    /// essential rows zeroed. `x` must carry its essential values.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let f = self.flux_total;
        let mut r = vec![0.0; self.total()];
        let x_flux = &x[..f];
        let x_mu = &x[f..];
        self.a.matvec_add(x_flux, &mut r[..f], 1.0);
        self.al.matvec_add(x_flux, &mut r[..f], 1.0);
        let bt = self.b.transpose();
        bt.matvec_add(x_mu, &mut r[..f], 1.0);
        self.b.matvec_add(x_flux, &mut r[f..], 1.0);
        for i in 0..self.total() {
            r[i] -= self.rhs_raw[i];
            if self.essential_mask[i] {
                r[i] = 0.0;
            }
        }
        r
    }
}

/// Dimensionally consistent augmentation weights from precomputed averages:
/// `kappa_i = alpha M_i^2 L_ref^2 max_j |<Mt_ij>|`.
pub fn kappa_from_means(
    means: &DMatrix<f64>,
    spec: &MixtureSpec,
    alpha: f64,
    l_ref: f64,
) -> Vec<f64> {
    (0..spec.n)
        .map(|i| {
            let max_mean = (0..spec.n)
                .map(|j| means[(i, j)].abs())
                .fold(0.0f64, f64::max);
            alpha * spec.molar_mass[i].powi(2) * l_ref * l_ref * max_mean
        })
        .collect()
}

/// Domain averages of the transport coefficients at the given state, then
/// the selection rule above.
pub fn choose_kappa(
    mesh: &Mesh,
    layout: &FieldLayout,
    spec: &MixtureSpec,
    state: &AssemblyState,
    alpha: f64,
    l_ref: f64,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid_argument("alpha must be positive"));
    }
    let rule = TriangleRule::with_exactness(2 * layout.degree + 2);
    let mut means = DMatrix::zeros(spec.n, spec.n);
    let mut volume = 0.0;
    let mut conc = Vec::new();
    for cell in 0..mesh.n_cells() {
        let geo = CellGeometry::from_cell(mesh, cell);
        let phys: Vec<Vec2> = rule.points.iter().map(|&p| geo.map(p)).collect();
        state.concentrations(mesh, layout, spec, cell, &rule.points, &phys, &mut conc)?;
        for (q, c) in conc.iter().enumerate() {
            let w = rule.weights[q] * geo.det;
            let ps = PointState::new(c.clone(), spec)?;
            let t = transport_coeffs(&ps, spec, false);
            for i in 0..spec.n {
                for j in 0..spec.n {
                    means[(i, j)] += w * t.m_tilde[(i, j)];
                }
            }
            volume += w;
        }
    }
    means /= volume;
    Ok(kappa_from_means(&means, spec, alpha, l_ref))
}

/// Zeroes essential rows and columns, moving known values to the right-hand
/// side and placing a unit diagonal.
pub fn apply_essential(matrix: &mut Csr, rhs: &mut [f64], mask: &[bool], values: &[f64]) {
    for r in 0..matrix.n_rows {
        let start = matrix.row_ptr[r];
        let end = matrix.row_ptr[r + 1];
        if mask[r] {
            for idx in start..end {
                matrix.vals[idx] = if matrix.cols[idx] == r { 1.0 } else { 0.0 };
            }
        } else {
            for idx in start..end {
                let c = matrix.cols[idx];
                if mask[c] {
                    rhs[r] -= matrix.vals[idx] * values[c];
                    matrix.vals[idx] = 0.0;
                }
            }
        }
    }
    for r in 0..matrix.n_rows {
        if mask[r] {
            rhs[r] = values[r];
        }
    }
}

/// Everything tabulated once per (element, rule) pair.
struct ReferenceData {
    rule: TriangleRule,
    rt_vals: Vec<Vec<Vec2>>,
    rt_divs: Vec<Vec<f64>>,
    dg_vals: Vec<Vec<f64>>,
    ref_mass: DMatrix<f64>,
    ref_mass_inv: DMatrix<f64>,
    /// `d_mat[t][b] = sum_q w_q psi_t div_b` (orientation applied per cell).
    edge_rule: (Vec<f64>, Vec<f64>),
    /// RT tabulations on the three reference edges at the edge rule points.
    rt_edge_vals: [Vec<Vec<Vec2>>; 3],
}

impl ReferenceData {
    fn new(layout: &FieldLayout) -> ReferenceData {
        let rule = TriangleRule::with_exactness(2 * layout.degree + 2);
        let tab = layout.rt.tabulate(&rule.points);
        let dg_vals = layout.dg.tabulate(&rule.points);
        let d = layout.dg.dim;
        let mut ref_mass = DMatrix::zeros(d, d);
        for t in 0..d {
            for u in 0..d {
                let mut acc = 0.0;
                for q in 0..rule.len() {
                    acc += rule.weights[q] * dg_vals[t][q] * dg_vals[u][q];
                }
                ref_mass[(t, u)] = acc;
            }
        }
        let ref_mass_inv = ref_mass
            .clone()
            .try_inverse()
            .expect("reference DG mass is positive definite");

        let edge_rule = gauss_legendre_unit(layout.degree + 2);
        let ref_edges = [
            (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)),
            (Vec2::new(0.0, 1.0), Vec2::new(0.0, 0.0)),
            (Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)),
        ];
        let rt_edge_vals = ref_edges.map(|(a, b)| {
            let pts: Vec<Vec2> = edge_rule.0.iter().map(|&s| a + (b - a) * s).collect();
            layout.rt.tabulate(&pts).values
        });

        ReferenceData {
            rule,
            rt_vals: tab.values,
            rt_divs: tab.divs,
            dg_vals,
            ref_mass,
            ref_mass_inv,
            edge_rule,
            rt_edge_vals,
        }
    }
}

/// Assembles the full block system at the given frozen (Picard) or current
/// (Newton) state. `newton` additionally assembles the coupling blocks
/// `E + F`, which requires a coefficient-backed state.
pub fn assemble_system(
    mesh: &Mesh,
    layout: &FieldLayout,
    problem: &Problem,
    state: &AssemblyState,
    kappa: &[f64],
    newton: bool,
) -> Result<BlockSystem> {
    let spec = &problem.spec;
    let n = spec.n;
    debug_assert_eq!(kappa.len(), n);
    let refs = ReferenceData::new(layout);
    let rt_dim = layout.rt.dim;
    let dg_dim = layout.dg.dim;
    let nq = refs.rule.len();
    let flux_total = layout.flux_total();
    let dg_total = layout.n_species * layout.dg_per_species;
    let gamma = spec.gamma;
    let with_al = kappa.iter().any(|&k| k != 0.0);

    let mut a_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut al_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut b_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut ef_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut mp_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut flux_block_trip: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; flux_total + dg_total];
    let mut cell_det = Vec::with_capacity(mesh.n_cells());

    // Scratch buffers reused across cells.
    let mut phys_vals = vec![vec![Vec2::ZERO; nq]; rt_dim];
    let mut divs = vec![vec![0.0; nq]; rt_dim];
    let mut conc: Vec<Vec<f64>> = Vec::new();
    let mut cross_fluxes: Vec<Vec<Vec2>> = Vec::new();

    for cell in 0..mesh.n_cells() {
        let geo = CellGeometry::from_cell(mesh, cell);
        cell_det.push(geo.det);
        let signs = &layout.cell_dof_signs[cell];
        let phys_pts: Vec<Vec2> = refs.rule.points.iter().map(|&p| geo.map(p)).collect();

        for a in 0..rt_dim {
            for q in 0..nq {
                phys_vals[a][q] = geo.piola(refs.rt_vals[a][q]) * signs[a];
                divs[a][q] = refs.rt_divs[a][q] * signs[a]; // reference-scaled
            }
        }

        state.concentrations(mesh, layout, spec, cell, &refs.rule.points, &phys_pts, &mut conc)?;
        let states: Vec<PointState> = conc
            .iter()
            .map(|c| PointState::new(c.clone(), spec))
            .collect::<Result<_>>()?;
        let transports: Vec<_> = states
            .iter()
            .map(|s| transport_coeffs(s, spec, newton))
            .collect();

        // Current fluxes at the quadrature points (Newton only).
        let fluxes: Option<Vec<Vec<Vec2>>> = if newton {
            if let Some((x, _)) = state.same_level_coeffs() {
                let mut out = vec![vec![Vec2::ZERO; n]; nq];
                for species in 0..n {
                    let dofs = layout.cell_flux_dofs(mesh, species, cell);
                    for q in 0..nq {
                        let mut v = Vec2::ZERO;
                        for (local, &dof) in dofs.iter().enumerate() {
                            v = v + phys_vals[local][q] * x[dof];
                        }
                        out[q][species] = v;
                    }
                }
                Some(out)
            } else if state
                .fluxes_cross_level(cell, &phys_pts, &mut cross_fluxes)
                .is_some()
            {
                Some(cross_fluxes.clone())
            } else {
                return Err(Error::invalid_argument(
                    "Newton assembly needs a coefficient-backed state",
                ));
            }
        } else {
            None
        };

        let flux_dofs: Vec<Vec<usize>> = (0..n)
            .map(|s| layout.cell_flux_dofs(mesh, s, cell))
            .collect();
        let mu_dofs: Vec<Vec<usize>> = (0..n).map(|s| layout.cell_mu_dofs(s, cell)).collect();

        // Flux-flux transport block, all species pairs, accumulated locally
        // before pushing triplets. The (a, b) dot products are shared by
        // every species pair at a given quadrature point.
        let mut a_local = vec![0.0f64; n * n * rt_dim * rt_dim];
        let mut dot_table = vec![0.0f64; rt_dim * rt_dim];
        for q in 0..nq {
            let w = refs.rule.weights[q] * geo.det;
            for a in 0..rt_dim {
                let fa = phys_vals[a][q];
                for b in a..rt_dim {
                    let d = fa.dot(phys_vals[b][q]);
                    dot_table[a * rt_dim + b] = d;
                    dot_table[b * rt_dim + a] = d;
                }
            }
            let mt = &transports[q].m_tilde;
            for i in 0..n {
                for j in i..n {
                    let coeff = w * mt[(i, j)];
                    if coeff == 0.0 {
                        continue;
                    }
                    let block = &mut a_local
                        [(i * n + j) * rt_dim * rt_dim..(i * n + j + 1) * rt_dim * rt_dim];
                    for (dst, &d) in block.iter_mut().zip(&dot_table) {
                        *dst += coeff * d;
                    }
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                let block =
                    &a_local[(i * n + j) * rt_dim * rt_dim..(i * n + j + 1) * rt_dim * rt_dim];
                for a in 0..rt_dim {
                    for b in 0..rt_dim {
                        let v = block[a * rt_dim + b];
                        if v != 0.0 {
                            a_trip.push((flux_dofs[i][a], flux_dofs[j][b], v));
                            if j != i {
                                a_trip.push((flux_dofs[j][b], flux_dofs[i][a], v));
                            }
                        }
                    }
                }
            }
        }

        // Divergence coupling: D[t][b] = sum_q w_q psi_t div_b (reference
        // measure; the Jacobian determinants cancel).
        let mut d_mat = DMatrix::zeros(dg_dim, rt_dim);
        for t in 0..dg_dim {
            for b in 0..rt_dim {
                let mut acc = 0.0;
                for q in 0..nq {
                    acc += refs.rule.weights[q] * refs.dg_vals[t][q] * divs[b][q];
                }
                d_mat[(t, b)] = acc;
            }
        }
        for species in 0..n {
            let scale = -1.0 / spec.molar_mass[species];
            for t in 0..dg_dim {
                let row = mu_dofs[species][t] - flux_total;
                for b in 0..rt_dim {
                    let v = scale * d_mat[(t, b)];
                    if v != 0.0 {
                        b_trip.push((row, flux_dofs[species][b], v));
                    }
                }
            }
        }

        // Augmented Lagrangian block via the factored per-cell form
        // kappa_i B_c^T M_c^{-1} B_c = (kappa_i / M_i^2) D^T Mref^{-1} D / det.
        if with_al {
            let g = d_mat.transpose() * &refs.ref_mass_inv * &d_mat;
            for species in 0..n {
                let k = kappa[species];
                if k == 0.0 {
                    continue;
                }
                let scale = k / (spec.molar_mass[species] * spec.molar_mass[species] * geo.det);
                for a in 0..rt_dim {
                    for b in 0..rt_dim {
                        let v = scale * g[(a, b)];
                        if v != 0.0 {
                            al_trip.push((flux_dofs[species][a], flux_dofs[species][b], v));
                        }
                    }
                }
            }
        }

        // DG mass (same block for every species; store species 0 indexing).
        for t in 0..dg_dim {
            for u in 0..dg_dim {
                let v = geo.det * refs.ref_mass[(t, u)];
                if v != 0.0 {
                    mp_trip.push((cell * dg_dim + t, cell * dg_dim + u, v));
                }
            }
        }

        // Right-hand sides: bulk-velocity term, AL source, continuity source.
        for q in 0..nq {
            let w = refs.rule.weights[q] * geo.det;
            let vb = (problem.v_bulk)(phys_pts[q]);
            let rho = states[q].rho;
            let coeff = gamma / rho;
            for a in 0..rt_dim {
                let val = w * coeff * vb.dot(phys_vals[a][q]);
                if val != 0.0 {
                    for species in 0..n {
                        rhs[flux_dofs[species][a]] += val;
                    }
                }
            }
            for species in 0..n {
                let r_i = (problem.source)(species, phys_pts[q]);
                if r_i != 0.0 {
                    for t in 0..dg_dim {
                        rhs[mu_dofs[species][t]] -= w * r_i * refs.dg_vals[t][q];
                    }
                    if with_al && kappa[species] != 0.0 {
                        let scale = kappa[species] / spec.molar_mass[species];
                        for a in 0..rt_dim {
                            // Reference measure: w_q det * div/det.
                            rhs[flux_dofs[species][a]] +=
                                scale * refs.rule.weights[q] * r_i * divs[a][q];
                        }
                    }
                }
            }
        }

        // Newton coupling blocks, accumulated locally.
        if let Some(fluxes) = &fluxes {
            let mut ef_local = vec![0.0f64; n * rt_dim * n * dg_dim];
            for q in 0..nq {
                let w = refs.rule.weights[q] * geo.det;
                let rho = states[q].rho;
                let vb = (problem.v_bulk)(phys_pts[q]);
                let grads = transports[q].d_dc.as_ref().expect("requested derivatives");
                for m in 0..n {
                    let dc_dmu = states[q].c[m] / spec.rt;
                    let f_term = gamma * spec.molar_mass[m] / (rho * rho);
                    for i in 0..n {
                        for a in 0..rt_dim {
                            let fa = phys_vals[a][q];
                            let mut sens = f_term * vb.dot(fa);
                            for j in 0..n {
                                sens += grads[m][(i, j)] * fluxes[q][j].dot(fa);
                            }
                            let base = w * dc_dmu * sens;
                            if base == 0.0 {
                                continue;
                            }
                            let row = i * rt_dim + a;
                            for t in 0..dg_dim {
                                ef_local[(row * n + m) * dg_dim + t] +=
                                    base * refs.dg_vals[t][q];
                            }
                        }
                    }
                }
            }
            for i in 0..n {
                for a in 0..rt_dim {
                    let row = i * rt_dim + a;
                    for m in 0..n {
                        for t in 0..dg_dim {
                            let v = ef_local[(row * n + m) * dg_dim + t];
                            if v != 0.0 {
                                ef_trip.push((
                                    flux_dofs[i][a],
                                    mu_dofs[m][t] - flux_total,
                                    v,
                                ));
                            }
                        }
                    }
                }
            }
        }

        // Dirichlet boundary term on the flux equations.
        for (local, &edge) in mesh.cell_edges[cell].iter().enumerate() {
            let Some(tag) = mesh.boundary_tag[edge] else {
                continue;
            };
            let n_out = mesh.edge_unit_normal(edge)
                .scale(mesh.orientation_sign(cell, local));
            let edge_len = mesh.edge_length(edge);
            let (qs, qw) = (&refs.edge_rule.0, &refs.edge_rule.1);
            let ref_edges = [
                (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)),
                (Vec2::new(0.0, 1.0), Vec2::new(0.0, 0.0)),
                (Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)),
            ];
            let (estart, eend) = ref_edges[local];
            for species in 0..n {
                if !problem.is_dirichlet(species, tag) {
                    continue;
                }
                let scale = -1.0 / spec.molar_mass[species];
                for (si, (&s, &ws)) in qs.iter().zip(qw).enumerate() {
                    let ref_pt = estart + (eend - estart) * s;
                    let x = geo.map(ref_pt);
                    let f = (problem.dirichlet_mu)(species, x);
                    for (a, vals) in refs.rt_edge_vals[local].iter().enumerate() {
                        let phi = geo.piola(vals[si]) * signs[a];
                        rhs[flux_dofs[species][a]] +=
                            scale * ws * edge_len * f * phi.dot(n_out);
                    }
                }
            }
        }

        // Per-species augmented flux blocks (species-local indexing) reuse
        // the already accumulated diagonal transport entries; the AL term is
        // merged after the cell loop.
        for species in 0..n {
            let offset = layout.flux_offset(species);
            let block = &a_local
                [(species * n + species) * rt_dim * rt_dim
                    ..(species * n + species + 1) * rt_dim * rt_dim];
            for a in 0..rt_dim {
                for b in 0..rt_dim {
                    let v = block[a * rt_dim + b];
                    if v != 0.0 {
                        flux_block_trip[species].push((
                            flux_dofs[species][a] - offset,
                            flux_dofs[species][b] - offset,
                            v,
                        ));
                    }
                }
            }
        }
    }

    // The AL contribution to the per-species blocks.
    if with_al {
        for &(r, c, v) in &al_trip {
            let species = r / layout.rt_per_species;
            debug_assert_eq!(species, c / layout.rt_per_species);
            let offset = layout.flux_offset(species);
            flux_block_trip[species].push((r - offset, c - offset, v));
        }
    }

    let a = Csr::from_triplets(flux_total, flux_total, &a_trip)?;
    let al = Csr::from_triplets(flux_total, flux_total, &al_trip)?;
    let b = Csr::from_triplets(dg_total, flux_total, &b_trip)?;
    let ef = if newton {
        Some(Csr::from_triplets(flux_total, dg_total, &ef_trip)?)
    } else {
        None
    };
    let m_p = Csr::from_triplets(
        layout.dg_per_species,
        layout.dg_per_species,
        &mp_trip,
    )?;
    let refs_mass = refs.ref_mass.clone();
    let dg_mass = DgMassInv {
        ref_mass: refs_mass,
        ref_mass_inv: refs.ref_mass_inv.clone(),
        cell_det,
        dg_dim,
    };

    // Monolithic composition.
    let total = flux_total + dg_total;
    let mut mono: Vec<(usize, usize, f64)> = Vec::with_capacity(
        a.nnz() + al.nnz() + 2 * b.nnz() + ef.as_ref().map_or(0, Csr::nnz),
    );
    for r in 0..flux_total {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            mono.push((r, c, v));
        }
        let (cols, vals) = al.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            mono.push((r, c, v));
        }
        if let Some(ef) = &ef {
            let (cols, vals) = ef.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                mono.push((r, flux_total + c, v));
            }
        }
    }
    for r in 0..dg_total {
        let (cols, vals) = b.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            mono.push((flux_total + r, c, v));
            mono.push((c, flux_total + r, v)); // B^T
        }
    }
    let mut matrix = Csr::from_triplets(total, total, &mono)?;

    let essential_mask = layout.essential.clone();
    let essential_vals = essential_values(mesh, layout, problem);
    let rhs_raw = rhs.clone();
    apply_essential(&mut matrix, &mut rhs, &essential_mask, &essential_vals);

    let mut flux_blocks = Vec::with_capacity(n);
    for species in 0..n {
        let mut block = Csr::from_triplets(
            layout.rt_per_species,
            layout.rt_per_species,
            &flux_block_trip[species],
        )?;
        let offset = layout.flux_offset(species);
        let mask: Vec<bool> = (0..layout.rt_per_species)
            .map(|d| essential_mask[offset + d])
            .collect();
        let vals: Vec<f64> = (0..layout.rt_per_species)
            .map(|d| essential_vals[offset + d])
            .collect();
        let mut dummy = vec![0.0; layout.rt_per_species];
        apply_essential(&mut block, &mut dummy, &mask, &vals);
        flux_blocks.push(block);
    }

    Ok(BlockSystem {
        n_species: n,
        flux_total,
        dg_total,
        a,
        al,
        b,
        ef,
        m_p,
        dg_mass,
        matrix,
        rhs,
        rhs_raw,
        flux_blocks,
        kappa: kappa.to_vec(),
        essential_mask,
        essential_vals,
    })
}

/// Newton residual and Jacobian at the iterate `x` (which must satisfy its
/// essential conditions). The residual uses the transport blocks evaluated
/// at `x`; the Jacobian shares them and adds the coupling blocks.
pub fn assemble_newton(
    mesh: &Mesh,
    layout: &FieldLayout,
    problem: &Problem,
    x: &[f64],
    kappa: &[f64],
) -> Result<(Vec<f64>, BlockSystem)> {
    let state = AssemblyState::SameLevel {
        x,
        normalize_to: None,
    };
    let sys = assemble_system(mesh, layout, problem, &state, kappa, true)?;
    let residual = sys.residual(x);
    Ok((residual, sys))
}

/// Residual only (no coupling blocks); cheaper when the Jacobian is not
/// needed, e.g. for the convergence test after an update.
pub fn assemble_residual_only(
    mesh: &Mesh,
    layout: &FieldLayout,
    problem: &Problem,
    x: &[f64],
    kappa: &[f64],
) -> Result<Vec<f64>> {
    let state = AssemblyState::SameLevel {
        x,
        normalize_to: None,
    };
    let sys = assemble_system(mesh, layout, problem, &state, kappa, false)?;
    Ok(sys.residual(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{interpolate_flux, flux_value};
    use crate::layout::build_layout;
    use crate::mesh::{build_rectangle_mesh, BoundaryTag};
    use crate::physics::transport_coeffs;
    use crate::problem::Problem;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn binary_problem(neumann: Vec<Vec<BoundaryTag>>) -> Problem {
        let mut d = DMatrix::zeros(2, 2);
        d[(0, 1)] = 2.0;
        d[(1, 0)] = 2.0;
        let spec = crate::physics::MixtureSpec::new(
            vec![1.0, 0.5],
            d,
            1.0,
            1.0,
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap();
        Problem {
            name: "binary-test",
            spec,
            pressure: 1.0,
            neumann_tags: neumann,
            dirichlet_mu: Arc::new(|s, p: Vec2| 0.1 * (s as f64 + 1.0) * (p.x - 0.3 * p.y)),
            neumann_flux: Arc::new(|_, _| 0.0),
            v_bulk: Arc::new(|p: Vec2| Vec2::new(0.3 - 0.1 * p.y, -0.2 + 0.05 * p.x)),
            source: Arc::new(|s, p: Vec2| if s == 0 { p.x * p.y } else { 0.5 - p.y }),
            exact: None,
            initial_concentrations: vec![0.6, 0.4],
        }
    }

    fn uniform_state() -> Vec<f64> {
        vec![0.8, 1.2]
    }

    #[test]
    fn transport_block_matches_dense_quadrature_oracle() {
        for k in 1..=2 {
            let mesh = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
            let problem = binary_problem(vec![vec![]; 2]);
            let layout = build_layout(&mesh, 2, k, &problem.neumann_tags).unwrap();
            let c = uniform_state();
            let state = AssemblyState::Uniform { c: &c };
            let sys = assemble_system(&mesh, &layout, &problem, &state, &[0.0, 0.0], false)
                .unwrap();

            let ps = PointState::new(c.clone(), &problem.spec).unwrap();
            let mt = transport_coeffs(&ps, &problem.spec, false).m_tilde;
            // Independent path: evaluate global basis functions pointwise
            // and integrate with a finer rule.
            let rule = TriangleRule::with_exactness(2 * k + 6);
            let f = layout.flux_total();
            let mut oracle: DMatrix<f64> = DMatrix::zeros(f, f);
            let mut unit = vec![0.0; layout.total];
            for i in 0..2 {
                for j in 0..2 {
                    for cell in 0..mesh.n_cells() {
                        let geo = CellGeometry::from_cell(&mesh, cell);
                        let da = layout.cell_flux_dofs(&mesh, i, cell);
                        let db = layout.cell_flux_dofs(&mesh, j, cell);
                        for q in 0..rule.len() {
                            let w = rule.weights[q] * geo.det;
                            for &ga in &da {
                                unit[ga] = 1.0;
                                let va = flux_value(&mesh, &layout, &unit, i, cell, rule.points[q]);
                                unit[ga] = 0.0;
                                for &gb in &db {
                                    unit[gb] = 1.0;
                                    let vb =
                                        flux_value(&mesh, &layout, &unit, j, cell, rule.points[q]);
                                    unit[gb] = 0.0;
                                    oracle[(ga, gb)] += w * mt[(i, j)] * va.dot(vb);
                                }
                            }
                        }
                    }
                }
            }
            let dense = sys.a.to_dense();
            let scale = oracle.amax();
            for r in 0..f {
                for c2 in 0..f {
                    assert!(
                        (dense[(r, c2)] - oracle[(r, c2)]).abs() <= 1e-12 * scale,
                        "k={k} entry ({r},{c2}): {} vs {}",
                        dense[(r, c2)],
                        oracle[(r, c2)]
                    );
                }
            }
        }
    }

    #[test]
    fn divergence_block_annihilates_interpolated_constants() {
        for k in 1..=3 {
            let mesh = build_rectangle_mesh(2, 1, 1.0, 1.0).unwrap();
            let problem = binary_problem(vec![vec![]; 2]);
            let layout = build_layout(&mesh, 2, k, &problem.neumann_tags).unwrap();
            let c = uniform_state();
            let state = AssemblyState::Uniform { c: &c };
            let sys =
                assemble_system(&mesh, &layout, &problem, &state, &[0.0, 0.0], false).unwrap();
            let coeffs = interpolate_flux(&mesh, &layout, &|_| Vec2::new(0.7, -0.3));
            let mut x_flux = vec![0.0; layout.flux_total()];
            for s in 0..2 {
                x_flux[layout.flux_slice(s)].copy_from_slice(&coeffs);
            }
            let mut y = vec![0.0; sys.dg_total];
            sys.b.matvec(&x_flux, &mut y);
            let worst = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-12, "k={k}: divergence residual {worst}");
        }
    }

    #[test]
    fn transport_block_is_symmetric_to_roundoff() {
        let mesh = build_rectangle_mesh(2, 2, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![]; 2]);
        let layout = build_layout(&mesh, 2, 2, &problem.neumann_tags).unwrap();
        let c = uniform_state();
        let state = AssemblyState::Uniform { c: &c };
        let sys = assemble_system(&mesh, &layout, &problem, &state, &[0.3, 0.4], false).unwrap();
        let scale = sys.a.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sys.a.max_asymmetry() <= 1e-13 * scale);
        assert!(sys.al.max_asymmetry() <= 1e-13 * scale);
    }

    #[test]
    fn al_factored_form_matches_dense_triple_product() {
        let mesh = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![]; 2]);
        let kappa = [1.3, 0.7];
        for k in 1..=2 {
            let layout = build_layout(&mesh, 2, k, &problem.neumann_tags).unwrap();
            let c = uniform_state();
            let state = AssemblyState::Uniform { c: &c };
            let sys = assemble_system(&mesh, &layout, &problem, &state, &kappa, false).unwrap();

            let b_dense = sys.b.to_dense();
            let mp_dense = sys.m_p.to_dense();
            let mp_inv = mp_dense.try_inverse().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let x: Vec<f64> = (0..layout.flux_total())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut via_csr = vec![0.0; layout.flux_total()];
            sys.al.matvec(&x, &mut via_csr);

            let rt_per = layout.rt_per_species;
            let dg_per = layout.dg_per_species;
            for s in 0..2 {
                let b_s = b_dense.view((s * dg_per, s * rt_per), (dg_per, rt_per));
                let x_s = DVector::from_column_slice(&x[s * rt_per..(s + 1) * rt_per]);
                let triple = b_s.transpose() * &mp_inv * (b_s * x_s) * kappa[s];
                for a in 0..rt_per {
                    let diff = (via_csr[s * rt_per + a] - triple[a]).abs();
                    assert!(diff <= 1e-12, "k={k} species {s} dof {a}: {diff:e}");
                }
            }
        }
    }

    #[test]
    fn al_block_is_positive_semidefinite_and_vanishes_at_zero_kappa() {
        let mesh = build_rectangle_mesh(2, 2, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![]; 2]);
        let layout = build_layout(&mesh, 2, 1, &problem.neumann_tags).unwrap();
        let c = uniform_state();
        let state = AssemblyState::Uniform { c: &c };
        let sys = assemble_system(&mesh, &layout, &problem, &state, &[0.9, 1.7], false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x: Vec<f64> = (0..layout.flux_total())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut y = vec![0.0; layout.flux_total()];
            sys.al.matvec(&x, &mut y);
            let quad: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(quad >= -1e-12);
        }
        let zero = assemble_system(&mesh, &layout, &problem, &state, &[0.0, 0.0], false).unwrap();
        assert_eq!(zero.al.nnz(), 0);
    }

    #[test]
    fn kappa_rule_hand_values_and_scaling() {
        let mut d = DMatrix::zeros(2, 2);
        d[(0, 1)] = 2.0;
        d[(1, 0)] = 2.0;
        let spec =
            crate::physics::MixtureSpec::new(vec![1.0, 1.0], d, 1.0, 1.0, vec![0.0; 2], 1.0)
                .unwrap();
        let mut means = DMatrix::zeros(2, 2);
        means[(0, 0)] = 0.5;
        means[(1, 1)] = 0.5;
        let kappa = kappa_from_means(&means, &spec, 10.0, 1.0);
        assert_eq!(kappa, vec![5.0, 5.0]);
        let doubled = kappa_from_means(&means, &spec, 20.0, 1.0);
        assert_eq!(doubled, vec![10.0, 10.0]);

        // Quadrature means at a uniform state reproduce the pointwise value.
        let mesh = build_rectangle_mesh(2, 2, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![]; 2]);
        let layout = build_layout(&mesh, 2, 1, &problem.neumann_tags).unwrap();
        let c = uniform_state();
        let state = AssemblyState::Uniform { c: &c };
        let kq = choose_kappa(&mesh, &layout, &problem.spec, &state, 10.0, 1.0).unwrap();
        let ps = PointState::new(c.clone(), &problem.spec).unwrap();
        let mt = transport_coeffs(&ps, &problem.spec, false).m_tilde;
        let expect = kappa_from_means(&mt, &problem.spec, 10.0, 1.0);
        for (a, b) in kq.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12 * b.abs());
        }
        assert!(choose_kappa(&mesh, &layout, &problem.spec, &state, 0.0, 1.0).is_err());
    }

    #[test]
    fn divergence_block_has_full_row_rank_on_free_unknowns() {
        let mesh = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
        for neumann in [
            vec![vec![]; 2],
            vec![vec![BoundaryTag::Bottom, BoundaryTag::Top]; 2],
        ] {
            let problem = binary_problem(neumann);
            let layout = build_layout(&mesh, 2, 1, &problem.neumann_tags).unwrap();
            let c = uniform_state();
            let state = AssemblyState::Uniform { c: &c };
            let sys =
                assemble_system(&mesh, &layout, &problem, &state, &[0.0; 2], false).unwrap();
            let b = sys.b.to_dense();
            let free: Vec<usize> = (0..layout.flux_total())
                .filter(|&d| !layout.essential[d])
                .collect();
            let mut reduced = DMatrix::zeros(sys.dg_total, free.len());
            for (lc, &gc) in free.iter().enumerate() {
                for r in 0..sys.dg_total {
                    reduced[(r, lc)] = b[(r, gc)];
                }
            }
            let svd = reduced.svd(false, false);
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > 1e-10)
                .count();
            assert_eq!(rank, sys.dg_total);
        }
    }

    #[test]
    fn monolithic_action_equals_sum_of_block_actions() {
        let mesh = build_rectangle_mesh(2, 1, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![]; 2]);
        let layout = build_layout(&mesh, 2, 2, &problem.neumann_tags).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..layout.total)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let state = AssemblyState::SameLevel {
            x: &x,
            normalize_to: None,
        };
        let kappa = [0.4, 0.8];
        let sys = assemble_system(&mesh, &layout, &problem, &state, &kappa, true).unwrap();

        let f = sys.flux_total;
        let mut whole = vec![0.0; sys.total()];
        sys.matrix.matvec(&x, &mut whole);

        let mut blocks = vec![0.0; sys.total()];
        sys.a.matvec_add(&x[..f], &mut blocks[..f], 1.0);
        sys.al.matvec_add(&x[..f], &mut blocks[..f], 1.0);
        sys.b.transpose().matvec_add(&x[f..], &mut blocks[..f], 1.0);
        sys.ef
            .as_ref()
            .unwrap()
            .matvec_add(&x[f..], &mut blocks[..f], 1.0);
        sys.b.matvec_add(&x[..f], &mut blocks[f..], 1.0);

        for (w, b) in whole.iter().zip(&blocks) {
            assert!((w - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn newton_jacobian_matches_central_differences() {
        let mesh = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![BoundaryTag::Top], vec![]]);
        let layout = build_layout(&mesh, 2, 1, &problem.neumann_tags).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut x: Vec<f64> = (0..layout.total)
            .map(|_| rng.gen_range(-0.4..0.4))
            .collect();
        // Essential dofs hold their boundary values (zero flux here).
        let vals = essential_values(&mesh, &layout, &problem);
        for d in 0..layout.total {
            if layout.essential[d] {
                x[d] = vals[d];
            }
        }
        let kappa = [0.2, 0.1];
        let (_, sys) = assemble_newton(&mesh, &layout, &problem, &x, &kappa).unwrap();

        let eps = 1e-6;
        for dir in 0..20 {
            let mut d: Vec<f64> = (0..layout.total)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            for i in 0..layout.total {
                if layout.essential[i] {
                    d[i] = 0.0;
                }
            }
            let mut xp = x.clone();
            let mut xm = x.clone();
            for i in 0..layout.total {
                xp[i] += eps * d[i];
                xm[i] -= eps * d[i];
            }
            let fp = assemble_residual_only(&mesh, &layout, &problem, &xp, &kappa).unwrap();
            let fm = assemble_residual_only(&mesh, &layout, &problem, &xm, &kappa).unwrap();
            let mut jd = vec![0.0; layout.total];
            sys.matrix.matvec(&d, &mut jd);
            // Essential rows of the eliminated Jacobian are identity rows,
            // absent from the residual; compare free rows only.
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..layout.total {
                if layout.essential[i] {
                    continue;
                }
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                num += (jd[i] - fd) * (jd[i] - fd);
                den += fd * fd;
            }
            let rel = num.sqrt() / den.sqrt().max(1e-30);
            assert!(rel <= 1e-5, "direction {dir}: relative error {rel:.3e}");
        }
    }

    #[test]
    fn essential_rows_become_identity_with_boundary_values() {
        let mesh = build_rectangle_mesh(1, 1, 1.0, 1.0).unwrap();
        let problem = binary_problem(vec![vec![BoundaryTag::Bottom], vec![]]);
        let layout = build_layout(&mesh, 2, 1, &problem.neumann_tags).unwrap();
        let c = uniform_state();
        let state = AssemblyState::Uniform { c: &c };
        let sys = assemble_system(&mesh, &layout, &problem, &state, &[0.0; 2], false).unwrap();
        for dof in 0..layout.total {
            if layout.essential[dof] {
                let (cols, vals) = sys.matrix.row(dof);
                for (&c2, &v) in cols.iter().zip(vals) {
                    assert_eq!(v, if c2 == dof { 1.0 } else { 0.0 });
                }
                assert_eq!(sys.rhs[dof], 0.0, "homogeneous flux data");
            }
        }
    }
}
