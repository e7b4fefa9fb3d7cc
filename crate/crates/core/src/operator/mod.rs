//! Operator coefficients, hypothesis checks, reflection and mollification.

pub mod catalog;
pub mod extend;
pub mod hypotheses;
pub mod json;
pub mod lyapunov;
pub mod mollify;
pub mod spec;

use thiserror::Error;

pub use catalog::{catalog_example, Family, PredictedConstants, Section5Params};
pub use extend::{extend_coefficients, extend_coefficients_with};
pub use hypotheses::{check_hypotheses, HypothesisOptions, HypothesisReport};
pub use json::SpecDocument;
pub use lyapunov::{lyapunov_rate, lyapunov_ratio, LyapunovTable};
pub use mollify::{mollify, mollify_with, MollifyConfig};
pub use spec::{Coefficients, Constants, Domain, Operator, OperatorSpec, Probe, Structure, WholeSpaceSpec};

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("boundary incompatibility {value:e} at t={}, x={:?}", probe.t, probe.x)]
    BoundaryIncompatible { probe: Probe, value: f64 },
    #[error("mollification radius must lie in (0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("mollifier quadrature not converged: relative difference {difference:e} at t={}, x={:?}", probe.t, probe.x)]
    QuadratureNonconvergence { probe: Probe, difference: f64 },
    #[error("diffusion matrix not symmetric (asymmetry {asymmetry:e}) at t={}, x={:?}", probe.t, probe.x)]
    NonSymmetric { probe: Probe, asymmetry: f64 },
    #[error("eta = {eta} below eta0 = {eta0} at t={}, x={:?}", probe.t, probe.x)]
    EtaBelowMinimum { probe: Probe, eta: f64, eta0: f64 },
    #[error("empty probe set")]
    NoProbes,
    #[error("parameter constraint violated: {0}")]
    CatalogConstraint(String),
    #[error("unbounded constant: {0}")]
    UnboundedConstant(String),
    #[error("unbounded-domain truncation unjustified: Lyapunov ratio above -{threshold} up to radius {max_radius}")]
    TruncationUnjustified { threshold: f64, max_radius: f64 },
    #[error("invalid operator document: {0}")]
    Document(String),
    #[error("in `{field}`: {source}")]
    Expression { field: String, source: ExprError },
}
