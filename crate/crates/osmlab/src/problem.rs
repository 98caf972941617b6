//! Problem definitions: boundary data, sources, exact solutions, and the
//! registry addressed by the command line.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::mesh::BoundaryTag;
use crate::physics::MixtureSpec;
use std::sync::Arc;

/// Per-species scalar data, queried pointwise.
pub type ScalarField = Arc<dyn Fn(usize, Vec2) -> f64 + Send + Sync>;
/// Per-species vector data.
pub type SpeciesVectorField = Arc<dyn Fn(usize, Vec2) -> Vec2 + Send + Sync>;
/// Species-independent vector data.
pub type VectorField = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

/// Exact fields for error measurement and frozen-state studies.
#[derive(Clone)]
pub struct ExactSolution {
    pub concentration: ScalarField,
    pub potential: ScalarField,
    pub flux: SpeciesVectorField,
}

/// A stationary diffusion problem on the unit square.
#[derive(Clone)]
pub struct Problem {
    pub name: &'static str,
    pub spec: MixtureSpec,
    /// Constant thermodynamic pressure; the equation of state target.
    pub pressure: f64,
    /// Boundary sides with an essential flux condition, per species. All
    /// remaining sides carry Dirichlet potential data; a species without any
    /// Dirichlet side would leave its potential defined only up to a
    /// constant and is rejected at setup.
    pub neumann_tags: Vec<Vec<BoundaryTag>>,
    /// Dirichlet data `f_i` for the potentials.
    pub dirichlet_mu: ScalarField,
    /// Prescribed outward normal flux `g_i` on the essential sides.
    pub neumann_flux: ScalarField,
    pub v_bulk: VectorField,
    /// Reaction rates `r_i`.
    pub source: ScalarField,
    pub exact: Option<ExactSolution>,
    /// Uniform, thermodynamically consistent starting concentrations.
    pub initial_concentrations: Vec<f64>,
}

impl Problem {
    /// True when species `i` has Dirichlet potential data on `tag`.
    pub fn is_dirichlet(&self, species: usize, tag: BoundaryTag) -> bool {
        !self.neumann_tags[species].contains(&tag)
    }

    /// Rejects setups without any Dirichlet side for some species; the
    /// mean-zero potential constraint needed for full-Neumann problems is
    /// out of scope.
    pub fn validate(&self) -> Result<()> {
        for (i, tags) in self.neumann_tags.iter().enumerate() {
            if BoundaryTag::ALL.iter().all(|t| tags.contains(t)) {
                return Err(Error::invalid_argument(format!(
                    "species {i} has flux conditions on the whole boundary; \
                     problems without Dirichlet potential data are not supported"
                )));
            }
        }
        Ok(())
    }
}

/// Looks up a problem by its registry name.
pub fn problem_by_name(name: &str) -> Result<Problem> {
    match name {
        "mms2d" => Ok(crate::manufactured::ManufacturedCase::new().into_problem()),
        "airway2d" => Ok(crate::airway::AirwayCase::new().into_problem()),
        other => Err(Error::invalid_argument(format!(
            "unknown problem '{other}', expected one of: mms2d, airway2d"
        ))),
    }
}
