//! Dirichlet and Neumann evolution operators for nonautonomous Kolmogorov
//! operators with unbounded coefficients on the half-space `{x_d ≥ 0}`.
//!
//! * [`operator`]: coefficient specs, hypothesis checks, reflection, mollification, catalog.
//! * [`grid`]: θ-scheme finite differences and the image-kernel oracle.
//! * [`stochastic`]: Feynman–Kac Monte Carlo (killed / folded / free diffusions).
//! * [`measures`]: empirical evolution systems of measures and diagnostics.
//! * [`estimates`]: audits of the gradient, decay, log-Sobolev and hypercontractivity estimates.
//! * [`scenario`]: JSON scenarios, orchestration and reports.

pub mod expr;
pub mod estimates;
pub mod grid;
pub mod measures;
pub mod operator;
pub mod quadrature;
pub mod scenario;
pub mod stochastic;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
