//! Finite-difference realisation of the Dirichlet, Neumann and whole-space
//! evolution operators on a truncated box.

pub mod gradient;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod solver;

use thiserror::Error;

pub use gradient::{gradient, gradient_of, GradientField};
pub use mesh::{Bc, Field, Grid};
pub use oracle::{image_kernel_oracle, image_kernel_oracle_gradient, image_kernel_tensor};
pub use solver::{solve, ArtificialBoundary, GridConfig, ThetaMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid configuration: {0}")]
    Config(String),
    #[error("positivity check failed for theta = {theta}: dt = {dt} exceeds {dt_max:e}; use a smaller dt")]
    Positivity { theta: f64, dt: f64, dt_max: f64 },
    #[error("non-finite value after step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },
    #[error("linear solver did not converge at t = {time} (relative residual {residual:e})")]
    LinearSolve { time: f64, residual: f64 },
    #[error("time {0} not stored in field")]
    TimeNotStored(f64),
    #[error("image oracle not applicable: {0}")]
    OracleNotApplicable(String),
}
