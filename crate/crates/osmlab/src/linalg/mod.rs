//! Sparse storage, direct factorizations, Krylov solvers, and dense patch
//! solves.

pub mod csr;
pub mod gmres;
pub mod ldl;
pub mod lu;
pub mod patchsolve;

pub use csr::Csr;
pub use gmres::{gmres, IdentityPrecond, KrylovConfig, LinearOperator, Preconditioner, SolveReport};
pub use ldl::LdlFactor;
pub use lu::{lu_factor, lu_solve, DenseLu, DirectSolver};
pub use patchsolve::{patch_solve, PatchFactor};
