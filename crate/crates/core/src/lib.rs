//! Numerical solver for coupled forward-backward Volterra integral equations by the method of continuation.
//!
//! The solver is generic over the scalar type; the aliases at the crate root fix it to `f64`,
//! and the `*32` aliases to `f32`.

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod base_linear;
pub mod builtin;
pub mod continuation;
pub mod error;
pub mod grid;
pub mod monotonicity;
pub mod oracle_lq;
pub mod problem;
pub mod scalar;
pub mod solution;
pub mod verify;

pub use base_linear::{reconstruct_base_fields, solve_base_diagonal, solve_base_fbde_crosscheck, LinearDrivers};
pub use continuation::{
    assemble_para, cold_guess, continuation_solve, continuation_solve_from, extend_to_fields, picard_solve,
    ContinuationParams, ParaProblem, SolveReport,
};
pub use error::{FbvieError, Result};
pub use grid::{integrate_lower, integrate_upper, kernel_convolve, TimeGrid, VectorPath};
pub use problem::{
    build_lq_problem, build_nonlinear_problem, mc2_differences, reduce_to_fbde, DifferenceMode, FbvieProblem, LqSpec,
    NonlinearSpec, Reduction, TerminalMap,
};
pub use scalar::Scalar;
pub use solution::{DiagonalSolution, FieldSolution, Orientation, TriangularField};

pub type Grid = TimeGrid<f64>;
pub type Path = VectorPath<f64>;
pub type Problem = FbvieProblem<f64>;
pub type Solution = DiagonalSolution<f64>;
pub type Fields = FieldSolution<f64>;

pub type Grid32 = TimeGrid<f32>;
pub type Path32 = VectorPath<f32>;
pub type Problem32 = FbvieProblem<f32>;
pub type Solution32 = DiagonalSolution<f32>;
pub type Fields32 = FieldSolution<f32>;
