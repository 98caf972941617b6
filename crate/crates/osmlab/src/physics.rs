//! Physics kernel: mixture data, transport matrices, the augmentation, and
//! the ideal-gas constitutive law.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Largest admissible argument to `exp` when recovering concentrations.
const EXP_ARG_LIMIT: f64 = 700.0;

/// Immutable physical description of a gaseous mixture.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    /// Species count, at least 2.
    pub n: usize,
    /// Molar masses `M_i` (kg/mol).
    pub molar_mass: Vec<f64>,
    /// Stefan-Maxwell diffusivities (m^2/s); symmetric, diagonal unused.
    pub diffusivity: DMatrix<f64>,
    /// Product of the gas constant and temperature (J/mol).
    pub rt: f64,
    /// Reference pressure (J/m^d).
    pub p_ref: f64,
    /// Reference chemical potentials (J/mol).
    pub mu_ref: Vec<f64>,
    /// Augmentation parameter.
    pub gamma: f64,
}

impl MixtureSpec {
    pub fn new(
        molar_mass: Vec<f64>,
        mut diffusivity: DMatrix<f64>,
        rt: f64,
        p_ref: f64,
        mu_ref: Vec<f64>,
        gamma: f64,
    ) -> Result<MixtureSpec> {
        let n = molar_mass.len();
        if n < 2 {
            return Err(Error::invalid_argument("need at least 2 species"));
        }
        if diffusivity.nrows() != n || diffusivity.ncols() != n || mu_ref.len() != n {
            return Err(Error::invalid_argument("mixture data sizes disagree"));
        }
        for i in 0..n {
            if !(molar_mass[i] > 0.0) {
                return Err(Error::invalid_argument("molar masses must be positive"));
            }
            for j in 0..n {
                if i != j {
                    if !(diffusivity[(i, j)] > 0.0) {
                        return Err(Error::invalid_argument(
                            "off-diagonal diffusivities must be positive",
                        ));
                    }
                    if (diffusivity[(i, j)] - diffusivity[(j, i)]).abs()
                        > 1e-12 * diffusivity[(i, j)].abs()
                    {
                        return Err(Error::invalid_argument("diffusivities must be symmetric"));
                    }
                    // Store an exactly symmetric table.
                    if i < j {
                        diffusivity[(j, i)] = diffusivity[(i, j)];
                    }
                }
            }
        }
        if !(rt > 0.0) || !(p_ref > 0.0) || !(gamma > 0.0) {
            return Err(Error::invalid_argument("RT, p_ref and gamma must be positive"));
        }
        Ok(MixtureSpec {
            n,
            molar_mass,
            diffusivity,
            rt,
            p_ref,
            mu_ref,
            gamma,
        })
    }
}

/// Pointwise thermodynamic state derived from strictly positive
/// concentrations.
#[derive(Debug, Clone)]
pub struct PointState {
    pub c: Vec<f64>,
    pub c_t: f64,
    pub rho: f64,
    pub omega: Vec<f64>,
}

impl PointState {
    pub fn new(c: Vec<f64>, spec: &MixtureSpec) -> Result<PointState> {
        if c.len() != spec.n {
            return Err(Error::invalid_state("species count mismatch"));
        }
        if c.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid_state(format!(
                "concentrations must be positive and finite, got {c:?}"
            )));
        }
        let c_t: f64 = c.iter().sum();
        let rho: f64 = c.iter().zip(&spec.molar_mass).map(|(ci, mi)| ci * mi).sum();
        let omega: Vec<f64> = c
            .iter()
            .zip(&spec.molar_mass)
            .map(|(ci, mi)| ci * mi / rho)
            .collect();
        Ok(PointState { c, c_t, rho, omega })
    }
}

/// Onsager's transport matrix: symmetric positive semi-definite with
/// nullspace spanned by the constant vector.
pub fn onsager_matrix(state: &PointState, spec: &MixtureSpec) -> DMatrix<f64> {
    let n = spec.n;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let off = -spec.rt * state.c[i] * state.c[j]
                    / (spec.diffusivity[(i, j)] * state.c_t);
                m[(i, j)] = off;
                diag -= off;
            }
        }
        m[(i, i)] = diag;
    }
    m
}

/// Rank-one mass-fraction augmentation `M + gamma w w^T`, symmetric positive
/// definite for `gamma > 0`.
pub fn augment(m: &DMatrix<f64>, state: &PointState, gamma: f64) -> Result<DMatrix<f64>> {
    if gamma < 0.0 {
        return Err(Error::invalid_argument("gamma must be nonnegative"));
    }
    let mut out = m.clone();
    for i in 0..state.omega.len() {
        for j in 0..state.omega.len() {
            out[(i, j)] += gamma * state.omega[i] * state.omega[j];
        }
    }
    Ok(out)
}

/// Flux-variable scaling `Mt_ij = M^gamma_ij / (M_i M_j c_i c_j)`; a
/// congruence with a positive diagonal, so definiteness is preserved.
pub fn flux_transport(
    m_gamma: &DMatrix<f64>,
    state: &PointState,
    spec: &MixtureSpec,
) -> DMatrix<f64> {
    let n = spec.n;
    // One factor per species keeps the scaling bit-exact symmetric.
    let z: Vec<f64> = (0..n).map(|i| spec.molar_mass[i] * state.c[i]).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = m_gamma[(i, j)] / (z[i] * z[j]);
        }
    }
    out
}

/// Flux-form transport coefficients and, when requested, their derivatives
/// with respect to each concentration. Uses the closed form
/// `Mt^gamma_ij = gamma / rho^2 + RT S_ij` with
/// `S_ij = -1 / (D_ij c_T M_i M_j)` off the diagonal and
/// `S_ii = (sum_{k != i} c_k / D_ik) / (M_i^2 c_i c_T)`.
#[derive(Debug, Clone)]
pub struct Transport {
    pub m_tilde: DMatrix<f64>,
    /// `d_dc[m][(i, j)] = d Mt^gamma_ij / d c_m`.
    pub d_dc: Option<Vec<DMatrix<f64>>>,
}

pub fn transport_coeffs(
    state: &PointState,
    spec: &MixtureSpec,
    with_derivatives: bool,
) -> Transport {
    let n = spec.n;
    let rt = spec.rt;
    let gamma = spec.gamma;
    let rho = state.rho;
    let c_t = state.c_t;
    let c = &state.c;
    let mm = &spec.molar_mass;

    let base = gamma / (rho * rho);
    let mut m_tilde = DMatrix::from_element(n, n, base);
    let mut friction = vec![0.0; n]; // sum_{k != i} c_k / D_ik
    for i in 0..n {
        for k in 0..n {
            if k != i {
                friction[i] += c[k] / spec.diffusivity[(i, k)];
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                m_tilde[(i, i)] += rt * friction[i] / (mm[i] * mm[i] * c[i] * c_t);
            } else {
                let mm_ij = mm[i] * mm[j];
                m_tilde[(i, j)] -= rt / (spec.diffusivity[(i, j)] * c_t * mm_ij);
            }
        }
    }

    let d_dc = with_derivatives.then(|| {
        let mut grads = Vec::with_capacity(n);
        for m in 0..n {
            let d_base = -2.0 * gamma * mm[m] / (rho * rho * rho);
            let mut g = DMatrix::from_element(n, n, d_base);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        if m == i {
                            g[(i, i)] -= rt * friction[i] * (c_t + c[i])
                                / (mm[i] * mm[i] * (c[i] * c_t).powi(2));
                        } else {
                            g[(i, i)] += rt
                                * (1.0 / (spec.diffusivity[(i, m)] * c[i] * c_t)
                                    - friction[i] / (c[i] * c_t * c_t))
                                / (mm[i] * mm[i]);
                        }
                    } else {
                        g[(i, j)] += rt / (spec.diffusivity[(i, j)] * c_t * c_t * mm[i] * mm[j]);
                    }
                }
            }
            grads.push(g);
        }
        grads
    });

    Transport { m_tilde, d_dc }
}

/// Inverts the ideal-gas constitutive law:
/// `c_i = (p_ref / RT) exp((mu_i - mu_ref_i) / RT)`, always positive.
pub fn concentrations_from_potentials(mu: &[f64], spec: &MixtureSpec) -> Result<Vec<f64>> {
    mu.iter()
        .enumerate()
        .map(|(i, &m)| {
            let arg = (m - spec.mu_ref[i]) / spec.rt;
            if !arg.is_finite() || arg > EXP_ARG_LIMIT {
                return Err(Error::StateOutOfRange(format!(
                    "potential {m} for species {i} exceeds the exp range"
                )));
            }
            Ok(spec.p_ref / spec.rt * arg.exp())
        })
        .collect()
}

/// The constitutive law itself: `mu_i = RT log(c_i RT / p_ref) + mu_ref_i`.
pub fn potentials_from_concentrations(c: &[f64], spec: &MixtureSpec) -> Result<Vec<f64>> {
    c.iter()
        .enumerate()
        .map(|(i, &ci)| {
            if !(ci > 0.0) {
                return Err(Error::invalid_state("nonpositive concentration"));
            }
            Ok(spec.rt * (ci * spec.rt / spec.p_ref).ln() + spec.mu_ref[i])
        })
        .collect()
}

/// Scales the concentrations so the equation of state `c_T RT = p` holds
/// exactly at this point; mole fractions are unchanged.
pub fn normalize_concentrations(c: &mut [f64], pressure: f64, spec: &MixtureSpec) -> Result<()> {
    let c_t: f64 = c.iter().sum();
    if !(c_t > 0.0) {
        return Err(Error::invalid_state("total concentration must be positive"));
    }
    let scale = pressure / (spec.rt * c_t);
    for ci in c {
        *ci *= scale;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn binary_spec() -> MixtureSpec {
        let mut d = DMatrix::zeros(2, 2);
        d[(0, 1)] = 2.0;
        d[(1, 0)] = 2.0;
        MixtureSpec::new(vec![1.0, 1.0], d, 1.0, 1.0, vec![0.0, 0.0], 1.0).unwrap()
    }

    fn random_spec(rng: &mut ChaCha8Rng, n: usize) -> MixtureSpec {
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.gen_range(0.5..3.0);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        let mm = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        MixtureSpec::new(mm, d, 1.0, 1.0, vec![0.0; n], 1.0).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, spec: &MixtureSpec) -> PointState {
        let c = (0..spec.n).map(|_| rng.gen_range(0.2..3.0)).collect();
        PointState::new(c, spec).unwrap()
    }

    #[test]
    fn binary_onsager_matrix_matches_hand_value() {
        let spec = binary_spec();
        let state = PointState::new(vec![1.0, 1.0], &spec).unwrap();
        let m = onsager_matrix(&state, &spec);
        // c_T = 2, off-diagonal = -1*1*1/(2*2) = -0.25.
        assert_relative_eq!(m[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(m[(0, 1)], -0.25, epsilon = 1e-15);
        assert_relative_eq!(m[(1, 0)], -0.25, epsilon = 1e-15);
        assert_relative_eq!(m[(1, 1)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn onsager_nullspace_is_the_constant_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let spec = random_spec(&mut rng, 4);
            let state = random_state(&mut rng, &spec);
            let m = onsager_matrix(&state, &spec);
            let ones = nalgebra::DVector::from_element(4, 1.0);
            assert!((&m * &ones).norm() < 1e-13);
            // PSD with exactly one zero eigenvalue.
            let eig = m.clone().symmetric_eigen();
            let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(vals[0].abs() < 1e-12);
            assert!(vals[1] > 1e-10);
            // Quadratic form nonnegative on random vectors.
            for _ in 0..5 {
                let x = nalgebra::DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
                assert!(x.dot(&(&m * &x)) >= -1e-13);
            }
        }
    }

    #[test]
    fn augment_hand_value_and_identity_case() {
        let spec = binary_spec();
        let state = PointState::new(vec![1.0, 1.0], &spec).unwrap();
        let m = onsager_matrix(&state, &spec);
        // rho = 2, omega = (1/2, 1/2): M^1 = M + 0.25 elementwise.
        let mg = augment(&m, &state, 1.0).unwrap();
        assert_relative_eq!(mg[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(mg[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(mg[(1, 1)], 0.5, epsilon = 1e-15);
        let m0 = augment(&m, &state, 0.0).unwrap();
        assert_eq!(m0, m);
        assert!(augment(&m, &state, -1.0).is_err());
    }

    #[test]
    fn augmented_matrix_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let spec = random_spec(&mut rng, 4);
            let state = random_state(&mut rng, &spec);
            let m = onsager_matrix(&state, &spec);
            let mg = augment(&m, &state, 1.0).unwrap();
            let eig = mg.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l > 1e-12));
            // Congruence: the flux-form matrix keeps the eigenvalue signs.
            let mt = flux_transport(&mg, &state, &spec);
            let eig_t = mt.clone().symmetric_eigen();
            assert!(eig_t.eigenvalues.iter().all(|&l| l > 1e-14));
            // Exact symmetry by construction.
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(mt[(i, j)], mt[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn unit_masses_and_concentrations_leave_scaling_trivial() {
        let spec = binary_spec();
        let state = PointState::new(vec![1.0, 1.0], &spec).unwrap();
        let m = onsager_matrix(&state, &spec);
        let mg = augment(&m, &state, 1.0).unwrap();
        let mt = flux_transport(&mg, &state, &spec);
        assert_eq!(mt, mg);
    }

    #[test]
    fn closed_form_transport_matches_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let spec = random_spec(&mut rng, 4);
            let state = random_state(&mut rng, &spec);
            let pipeline = {
                let m = onsager_matrix(&state, &spec);
                let mg = augment(&m, &state, spec.gamma).unwrap();
                flux_transport(&mg, &state, &spec)
            };
            let fast = transport_coeffs(&state, &spec, false).m_tilde;
            for i in 0..4 {
                for j in 0..4 {
                    assert_relative_eq!(pipeline[(i, j)], fast[(i, j)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn transport_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let spec = random_spec(&mut rng, 4);
            let state = random_state(&mut rng, &spec);
            let grads = transport_coeffs(&state, &spec, true).d_dc.unwrap();
            let h = 1e-6;
            for m in 0..4 {
                let mut cp = state.c.clone();
                cp[m] += h;
                let sp = PointState::new(cp, &spec).unwrap();
                let mut cm = state.c.clone();
                cm[m] -= h;
                let sm = PointState::new(cm, &spec).unwrap();
                let fp = transport_coeffs(&sp, &spec, false).m_tilde;
                let fm = transport_coeffs(&sm, &spec, false).m_tilde;
                for i in 0..4 {
                    for j in 0..4 {
                        let fd = (fp[(i, j)] - fm[(i, j)]) / (2.0 * h);
                        assert_relative_eq!(
                            grads[m][(i, j)],
                            fd,
                            epsilon = 1e-6,
                            max_relative = 1e-6
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn constitutive_law_roundtrip() {
        let spec = binary_spec();
        let c = concentrations_from_potentials(&[0.0, 0.0], &spec).unwrap();
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-15);
        let c2 = concentrations_from_potentials(&[2.0f64.ln(), 0.0], &spec).unwrap();
        assert_relative_eq!(c2[0], 2.0, epsilon = 1e-14);

        let mu = vec![0.3, -1.7];
        let conc = concentrations_from_potentials(&mu, &spec).unwrap();
        let back = potentials_from_concentrations(&conc, &spec).unwrap();
        for (a, b) in mu.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert!(concentrations_from_potentials(&[800.0, 0.0], &spec).is_err());
    }

    #[test]
    fn normalization_enforces_equation_of_state() {
        let spec = binary_spec();
        let mut c = vec![1.0, 1.0];
        normalize_concentrations(&mut c, 4.0, &spec).unwrap();
        assert_eq!(c, vec![2.0, 2.0]);

        // Already consistent data is untouched; mole fractions invariant.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec4 = random_spec(&mut rng, 4);
        let mut c4 = vec![0.8, 0.1, 0.4, 0.7];
        let chi_before: Vec<f64> = c4.iter().map(|v| v / 2.0).collect();
        normalize_concentrations(&mut c4, 5.0, &spec4).unwrap();
        let c_t: f64 = c4.iter().sum();
        assert_relative_eq!(c_t * spec4.rt, 5.0, epsilon = 1e-13);
        let chi_after: Vec<f64> = c4.iter().map(|v| v / c_t).collect();
        for (a, b) in chi_before.iter().zip(&chi_after) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }
}
