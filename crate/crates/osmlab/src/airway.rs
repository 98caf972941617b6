//! Cross-diffusion of nitrogen, oxygen, carbon dioxide, and water vapour in
//! a channel proxy for the upper airways: Dirichlet potential data derived
//! from mole fractions on the left (tracheal) and right (bronchial) ends,
//! impermeable walls on top and bottom.
//!
//! The SI data is nondimensionalized before solving: lengths by the domain
//! size, concentrations by `p / RT`, diffusivities by their maximum, and
//! molar masses by their maximum. The pressure and the gas constant appear
//! only through the mole fractions, which are dimensionless.

use crate::geom::Vec2;
use crate::mesh::BoundaryTag;
use crate::physics::MixtureSpec;
use crate::problem::Problem;
use nalgebra::DMatrix;
use std::sync::Arc;

/// CODATA 2018 molar gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314_462_618;

/// Mole fractions at the entrance of the trachea (N2, O2, CO2, H2O).
pub const CHI_TRACHEA: [f64; 4] = [0.7409, 0.1967, 0.0004, 0.0620];
/// Mole fractions at the end of the bronchi.
pub const CHI_BRONCHI: [f64; 4] = [0.7490, 0.1360, 0.0530, 0.0620];

/// Ambient pressure, J/m^3.
pub const PRESSURE_SI: f64 = 101_325.0;
/// Temperature, K.
pub const TEMPERATURE: f64 = 298.0;
/// Molar masses, kg/mol.
pub const MOLAR_MASS_SI: [f64; 4] = [0.028, 0.032, 0.044, 0.018];

/// Stefan-Maxwell diffusivities in m^2/s.
pub fn diffusivity_si() -> DMatrix<f64> {
    let scaled = [
        (0, 1, 21.87),
        (0, 2, 16.63),
        (0, 3, 23.15),
        (1, 2, 16.40),
        (1, 3, 22.85),
        (2, 3, 16.02),
    ];
    let mut d = DMatrix::zeros(4, 4);
    for (i, j, v) in scaled {
        d[(i, j)] = v * 1e-6;
        d[(j, i)] = v * 1e-6;
    }
    d
}

/// The airway problem with both its SI description and the nondimensional
/// mixture actually solved.
#[derive(Debug, Clone)]
pub struct AirwayCase {
    pub spec: MixtureSpec,
    /// Nondimensional pressure; concentrations are scaled by `p/RT` so the
    /// equation-of-state target is 1.
    pub pressure: f64,
    /// Scale factors of the nondimensionalization, recorded as metadata:
    /// (concentration, diffusivity, molar mass).
    pub scales: (f64, f64, f64),
}

impl AirwayCase {
    pub fn new() -> AirwayCase {
        let d_si = diffusivity_si();
        let d_scale = d_si.iter().cloned().fold(0.0f64, f64::max);
        AirwayCase::build(d_si, d_scale)
    }

    fn build(d_si: DMatrix<f64>, d_scale: f64) -> AirwayCase {
        let c_scale = PRESSURE_SI / (GAS_CONSTANT * TEMPERATURE);
        let m_scale = MOLAR_MASS_SI.iter().cloned().fold(f64::MIN, f64::max);
        let d = d_si.map(|v| v / d_scale);
        let molar_mass = MOLAR_MASS_SI.iter().map(|m| m / m_scale).collect();
        // Nondimensional constitutive constants: RT' = 1, p_ref' = 1, so
        // mu_i' = log(c_i') and the Dirichlet data is log of mole fraction.
        let spec = MixtureSpec::new(molar_mass, d, 1.0, 1.0, vec![0.0; 4], 1.0)
            .expect("airway mixture data");
        AirwayCase {
            spec,
            pressure: 1.0,
            scales: (c_scale, d_scale, m_scale),
        }
    }

    /// Dimensional boundary concentration of a species at the trachea,
    /// mol/m^3, from the mole fraction table and the equation of state.
    pub fn tracheal_concentration_si(species: usize) -> f64 {
        CHI_TRACHEA[species] * PRESSURE_SI / (GAS_CONSTANT * TEMPERATURE)
    }

    pub fn into_problem(self) -> Problem {
        let walls = vec![vec![BoundaryTag::Bottom, BoundaryTag::Top]; 4];
        // Equimolar start at the problem pressure: c_i' = 1/4.
        let initial = vec![0.25; 4];
        Problem {
            name: "airway2d",
            spec: self.spec.clone(),
            pressure: self.pressure,
            neumann_tags: walls,
            dirichlet_mu: Arc::new(move |species, p: Vec2| {
                let chi = if p.x < 0.5 {
                    CHI_TRACHEA[species]
                } else {
                    CHI_BRONCHI[species]
                };
                chi.ln()
            }),
            neumann_flux: Arc::new(|_, _| 0.0),
            v_bulk: Arc::new(|_| Vec2::ZERO),
            source: Arc::new(|_, _| 0.0),
            exact: None,
            initial_concentrations: initial,
        }
    }
}

impl Default for AirwayCase {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mole_fractions_sum_to_one_at_both_ends() {
        assert_relative_eq!(CHI_TRACHEA.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(CHI_BRONCHI.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tracheal_oxygen_concentration_follows_the_state_equation() {
        let c = AirwayCase::tracheal_concentration_si(1);
        assert_relative_eq!(
            c,
            0.1967 * 101_325.0 / (GAS_CONSTANT * 298.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn carbon_dioxide_molar_mass() {
        assert_eq!(MOLAR_MASS_SI[2], 0.044);
    }

    #[test]
    fn nondimensional_mixture_is_well_scaled() {
        let case = AirwayCase::new();
        let max_d = case
            .spec
            .diffusivity
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        assert_relative_eq!(max_d, 1.0, epsilon = 1e-12);
        let max_m = case
            .spec
            .molar_mass
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        assert_relative_eq!(max_m, 1.0, epsilon = 1e-12);
        assert_eq!(case.pressure, 1.0);
    }

    #[test]
    fn boundary_data_is_log_mole_fraction() {
        let problem = AirwayCase::new().into_problem();
        let left = (problem.dirichlet_mu)(1, Vec2::new(0.0, 0.3));
        assert_relative_eq!(left, 0.1967f64.ln(), epsilon = 1e-12);
        let right = (problem.dirichlet_mu)(2, Vec2::new(1.0, 0.7));
        assert_relative_eq!(right, 0.0530f64.ln(), epsilon = 1e-12);
    }
}
