//! The four-species manufactured solution on the unit square, with
//! hand-differentiated source terms.
//!
//! Concentrations come in two complementary pairs,
//! `c_1 = k_1 + K_1`, `c_2 = -k_1 + K_1`, `c_3 = k_2 + K_2`,
//! `c_4 = -k_2 + K_2`, so the total concentration is the constant
//! `2(K_1 + K_2)` and the species velocities
//! `v_i = -(c_T / beta) grad(c_i)/c_i + rho v_bulk / c_T` solve the
//! transport equations exactly when the cross-pair diffusivities coincide.

use crate::geom::Vec2;
use crate::physics::MixtureSpec;
use crate::problem::{ExactSolution, Problem};
use crate::quadrature::gauss_legendre_unit;
use nalgebra::DMatrix;
use std::f64::consts::PI;
use std::sync::Arc;

const K1: f64 = 1.0;
const K2: f64 = 1.0;

/// Problem data and exact fields for the manufactured case.
#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub spec: MixtureSpec,
    /// Momentum density `rho v_bulk`, a constant.
    pub momentum: Vec2,
    /// The constant pressure `c_T RT`.
    pub pressure: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl ManufacturedCase {
    pub fn new() -> ManufacturedCase {
        let mut d = DMatrix::zeros(4, 4);
        let entries = [
            (0, 1, 2.0),
            (0, 2, 1.0),
            (0, 3, 1.0),
            (1, 2, 1.0),
            (1, 3, 1.0),
            (2, 3, 3.0),
        ];
        for (i, j, v) in entries {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        // The construction requires equal cross-pair diffusivities.
        assert_eq!(d[(0, 2)], d[(0, 3)]);
        assert_eq!(d[(0, 2)], d[(1, 2)]);
        assert_eq!(d[(0, 2)], d[(1, 3)]);

        let spec = MixtureSpec::new(vec![1.0; 4], d, 1.0, 1.0, vec![0.0; 4], 1.0)
            .expect("manufactured mixture data");
        let beta1 = 2.0 * K1 * (1.0 / spec.diffusivity[(0, 1)] + 1.0 / spec.diffusivity[(0, 3)]);
        let beta2 = 2.0 * K2 * (1.0 / spec.diffusivity[(2, 3)] + 1.0 / spec.diffusivity[(0, 3)]);
        ManufacturedCase {
            spec,
            momentum: Vec2::new(0.0, 1.0),
            pressure: 2.0 * (K1 + K2),
            beta1,
            beta2,
        }
    }

    fn k1(&self, p: Vec2) -> f64 {
        0.5 * (8.0 * p.x * p.y * (1.0 - p.x) * (1.0 - p.y)).exp()
    }

    fn k1_derivatives(&self, p: Vec2) -> (f64, Vec2, f64) {
        let g = 8.0 * p.x * p.y * (1.0 - p.x) * (1.0 - p.y);
        let gx = 8.0 * p.y * (1.0 - p.y) * (1.0 - 2.0 * p.x);
        let gy = 8.0 * p.x * (1.0 - p.x) * (1.0 - 2.0 * p.y);
        let gxx = -16.0 * p.y * (1.0 - p.y);
        let gyy = -16.0 * p.x * (1.0 - p.x);
        let k = 0.5 * g.exp();
        let grad = Vec2::new(k * gx, k * gy);
        let lap = k * (gx * gx + gy * gy + gxx + gyy);
        (k, grad, lap)
    }

    fn k2(&self, p: Vec2) -> f64 {
        0.5 * (PI * p.x).sin() * (PI * p.y).sin()
    }

    fn k2_derivatives(&self, p: Vec2) -> (f64, Vec2, f64) {
        let k = self.k2(p);
        let grad = Vec2::new(
            0.5 * PI * (PI * p.x).cos() * (PI * p.y).sin(),
            0.5 * PI * (PI * p.x).sin() * (PI * p.y).cos(),
        );
        (k, grad, -2.0 * PI * PI * k)
    }

    pub fn c_total(&self) -> f64 {
        2.0 * (K1 + K2)
    }

    pub fn concentration(&self, species: usize, p: Vec2) -> f64 {
        match species {
            0 => self.k1(p) + K1,
            1 => -self.k1(p) + K1,
            2 => self.k2(p) + K2,
            3 => -self.k2(p) + K2,
            _ => panic!("species out of range"),
        }
    }

    pub fn concentration_gradient(&self, species: usize, p: Vec2) -> Vec2 {
        let (_, g1, _) = self.k1_derivatives(p);
        let (_, g2, _) = self.k2_derivatives(p);
        match species {
            0 => g1,
            1 => g1 * -1.0,
            2 => g2,
            3 => g2 * -1.0,
            _ => panic!("species out of range"),
        }
    }

    fn beta(&self, species: usize) -> f64 {
        if species < 2 {
            self.beta1
        } else {
            self.beta2
        }
    }

    /// Exact chemical potential via the constitutive law.
    pub fn potential(&self, species: usize, p: Vec2) -> f64 {
        let c = self.concentration(species, p);
        self.spec.rt * (c * self.spec.rt / self.spec.p_ref).ln() + self.spec.mu_ref[species]
    }

    pub fn velocity(&self, species: usize, p: Vec2) -> Vec2 {
        let c = self.concentration(species, p);
        let grad = self.concentration_gradient(species, p);
        let c_t = self.c_total();
        grad * (-c_t / (self.beta(species) * c)) + self.momentum * (1.0 / c_t)
    }

    /// Mass flux `J_i = M_i c_i v_i`.
    pub fn flux(&self, species: usize, p: Vec2) -> Vec2 {
        let c = self.concentration(species, p);
        self.velocity(species, p) * (self.spec.molar_mass[species] * c)
    }

    /// Source rate `r_i = div(c_i v_i)`, differentiated by hand:
    /// `r_i = -(c_T / beta) lap(c_i) + (rho v_bulk / c_T) . grad(c_i)`.
    pub fn source(&self, species: usize, p: Vec2) -> f64 {
        let (_, grad1, lap1) = self.k1_derivatives(p);
        let (_, grad2, lap2) = self.k2_derivatives(p);
        let (grad, lap) = match species {
            0 => (grad1, lap1),
            1 => (grad1 * -1.0, -lap1),
            2 => (grad2, lap2),
            3 => (grad2 * -1.0, -lap2),
            _ => panic!("species out of range"),
        };
        let c_t = self.c_total();
        -c_t / self.beta(species) * lap + self.momentum.dot(grad) / c_t
    }

    /// Constant bulk velocity `(rho v_bulk) / rho`; with unit molar masses
    /// `rho = c_T`.
    pub fn v_bulk(&self) -> Vec2 {
        self.momentum * (1.0 / self.c_total())
    }

    /// Spatial means of the exact concentrations; a thermodynamically
    /// consistent uniform starting state for the Picard iteration.
    pub fn mean_concentrations(&self) -> Vec<f64> {
        let (x, w) = gauss_legendre_unit(24);
        let mut mean_k1 = 0.0;
        let mut mean_k2 = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            for (j, &yj) in x.iter().enumerate() {
                let p = Vec2::new(xi, yj);
                mean_k1 += w[i] * w[j] * self.k1(p);
                mean_k2 += w[i] * w[j] * self.k2(p);
            }
        }
        vec![K1 + mean_k1, K1 - mean_k1, K2 + mean_k2, K2 - mean_k2]
    }

    pub fn into_problem(self) -> Problem {
        let case = Arc::new(self);
        let c = case.clone();
        let exact = ExactSolution {
            concentration: Arc::new({
                let c = case.clone();
                move |s, p| c.concentration(s, p)
            }),
            potential: Arc::new({
                let c = case.clone();
                move |s, p| c.potential(s, p)
            }),
            flux: Arc::new({
                let c = case.clone();
                move |s, p| c.flux(s, p)
            }),
        };
        Problem {
            name: "mms2d",
            spec: case.spec.clone(),
            pressure: case.pressure,
            neumann_tags: vec![Vec::new(); 4],
            dirichlet_mu: Arc::new({
                let c = case.clone();
                move |s, p| c.potential(s, p)
            }),
            neumann_flux: Arc::new(|_, _| 0.0),
            v_bulk: Arc::new({
                let c = case.clone();
                move |_| c.v_bulk()
            }),
            source: Arc::new(move |s, p| c.source(s, p)),
            exact: Some(exact),
            initial_concentrations: case.mean_concentrations(),
        }
    }
}

impl Default for ManufacturedCase {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{onsager_matrix, PointState};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_points(count: usize, seed: u64) -> Vec<Vec2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| Vec2::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)))
            .collect()
    }

    #[test]
    fn beta_values_match_hand_arithmetic() {
        let case = ManufacturedCase::new();
        assert_relative_eq!(case.beta1, 3.0, epsilon = 1e-15);
        assert_relative_eq!(case.beta2, 8.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_concentrations() {
        let case = ManufacturedCase::new();
        let p = Vec2::new(0.5, 0.5);
        // k_2(1/2, 1/2) = 1/2.
        assert_relative_eq!(case.concentration(2, p), 1.5, epsilon = 1e-14);
        assert_relative_eq!(case.concentration(3, p), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn total_concentration_is_constant() {
        let case = ManufacturedCase::new();
        for p in sample_points(30, 1) {
            let c_t: f64 = (0..4).map(|s| case.concentration(s, p)).sum();
            assert_relative_eq!(c_t, 4.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn mass_average_constraint_holds_pointwise() {
        let case = ManufacturedCase::new();
        for p in sample_points(30, 2) {
            let mut momentum = Vec2::ZERO;
            for s in 0..4 {
                let c = case.concentration(s, p);
                momentum = momentum + case.velocity(s, p) * (case.spec.molar_mass[s] * c);
            }
            assert!((momentum - case.momentum).norm() < 1e-10);
        }
    }

    #[test]
    fn exact_fields_satisfy_the_strong_transport_equations() {
        let case = ManufacturedCase::new();
        for p in sample_points(40, 3) {
            let c: Vec<f64> = (0..4).map(|s| case.concentration(s, p)).collect();
            let state = PointState::new(c, &case.spec).unwrap();
            let m = onsager_matrix(&state, &case.spec);
            for i in 0..4 {
                // d_i = -c_i grad(mu_i) = -RT grad(c_i).
                let d = case.concentration_gradient(i, p) * (-case.spec.rt);
                let mut mv = Vec2::ZERO;
                for j in 0..4 {
                    mv = mv + case.velocity(j, p) * m[(i, j)];
                }
                assert!(
                    (d - mv).norm() < 1e-10,
                    "species {i} at {p:?}: {d:?} vs {mv:?}"
                );
            }
        }
    }

    #[test]
    fn gibbs_duhem_sum_of_driving_forces_vanishes() {
        let case = ManufacturedCase::new();
        for p in sample_points(30, 4) {
            let mut sum = Vec2::ZERO;
            for s in 0..4 {
                sum = sum + case.concentration_gradient(s, p) * (-case.spec.rt);
            }
            assert!(sum.norm() < 1e-10);
        }
    }

    #[test]
    fn sources_match_numerical_divergence() {
        let case = ManufacturedCase::new();
        let h = 1e-5;
        for p in sample_points(20, 5) {
            for s in 0..4 {
                let f = |q: Vec2| case.velocity(s, q) * case.concentration(s, q);
                let div = (f(Vec2::new(p.x + h, p.y)).x - f(Vec2::new(p.x - h, p.y)).x
                    + f(Vec2::new(p.x, p.y + h)).y
                    - f(Vec2::new(p.x, p.y - h)).y)
                    / (2.0 * h);
                assert_relative_eq!(case.source(s, p), div, epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn mean_concentrations_are_consistent_with_the_state_equation() {
        let case = ManufacturedCase::new();
        let means = case.mean_concentrations();
        let c_t: f64 = means.iter().sum();
        assert_relative_eq!(c_t * case.spec.rt, case.pressure, epsilon = 1e-12);
        // sin-sin average is 2/pi^2.
        assert_relative_eq!(
            means[2] - 1.0,
            2.0 / (PI * PI),
            epsilon = 1e-10
        );
    }
}
