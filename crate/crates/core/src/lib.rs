//! Low-rank space-time minimal-residual Galerkin solver for linear parabolic
//! equations on the unit square.

pub mod error;
pub mod experiment;
pub mod greedy;
pub mod kron;
pub mod minres;
pub mod norms;
pub mod problem;
pub mod quadrature;
pub mod space;
pub mod sparse;
pub mod time;

pub use error::{Error, Result};
pub use greedy::{greedy_solve, Diagnostics, LowRankSolution, SolverConfig, Status};
pub use kron::{KroneckerSumOperator, SeparatedVector, SpaceFactor};
pub use minres::{Method, MinResSystem};
pub use problem::{CaseName, ManufacturedSolution, SeparatedParabolicProblem};
pub use space::{QuadMesh, SpaceDiscretization};
pub use sparse::{CsrMatrix, Tridiagonal};
pub use time::{TimeDiscretization, TimeGrid};
