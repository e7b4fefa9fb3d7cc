//! Feynman–Kac Monte Carlo for the Dirichlet (killed), Neumann (folded) and
//! whole-space (free) evolution operators.
//!
//! `G(t,s)f(x) = E[e^{-∫c} f(Y)]` where `Y` starts at `x` and runs for the
//! duration `t - s`; at path time `θ` the coefficients are evaluated at time
//! `t - θ` (left endpoints of each Euler step).

pub mod engine;
pub mod sum;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{
    estimate_from_values, feynman_kac, fk_values, regime_for, simulate, simulate_cloud, simulate_horizons, simulate_snapshots, FkEstimate,
    PathEnsemble,
};
pub use sum::{mean_and_stderr, pairwise_sum};

/// Deterministic child seed for a labelled pipeline step (FNV-1a then splitmix64).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Library default blow-up radius when none is configured.
pub const DEFAULT_BLOWUP_RADIUS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Killed,
    Folded,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub particles: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub bridge_correction: bool,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub blowup_radius: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl McConfig {
    pub fn new(particles: usize, dt: f64, seed: u64) -> Self {
        McConfig {
            particles,
            dt,
            seed,
            bridge_correction: true,
            antithetic: false,
            blowup_radius: None,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.particles == 0 {
            return Err(McError::Config("particles must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(McError::Config("dt must be positive".into()));
        }
        if self.blowup_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(McError::Config("blowup_radius must be positive".into()));
        }
        Ok(())
    }

    pub fn blowup(&self) -> f64 {
        self.blowup_radius.unwrap_or(DEFAULT_BLOWUP_RADIUS)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    Config(String),
    #[error("2Q is not positive definite at t={t}, x={x:?}")]
    Cholesky { t: f64, x: Vec<f64> },
    #[error("regime {0:?} is not available for this operator")]
    Regime(Regime),
    #[error("{0}")]
    Operator(String),
}
