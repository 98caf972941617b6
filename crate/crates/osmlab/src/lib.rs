//! Mixed finite element solvers and preconditioners for the stationary
//! Onsager-Stefan-Maxwell equations of multicomponent diffusion in the
//! isobaric, isothermal, ideal-gas regime.
//!
//! The crate discretizes the chemical potentials and mass fluxes with
//! `(RT_k)^n x (DG_{k-1})^n` spaces on structured triangle meshes, linearizes
//! with Picard or inexact Newton, and solves the resulting saddle-point
//! systems with flexible GMRES behind a stack of preconditioners: an
//! augmented Lagrangian block preconditioner, geometric multigrid for the
//! augmented flux blocks, and monolithic multigrid with either the block
//! preconditioner or vertex Vanka patches as smoother.
//!
//! See the `examples/` directory for runnable entry points; the `osm` binary
//! drives the experiment grids from the command line.

pub mod element;
pub mod error;
pub mod fields;
pub mod layout;
pub mod linalg;
pub mod geom;
pub mod mesh;
pub mod quadrature;
pub mod transfer;

pub mod airway;
pub mod assemble;
pub mod manufactured;
pub mod physics;
pub mod patches;
pub mod problem;

pub use error::{Error, Result};
