//! Audits of the gradient, decay, log-Sobolev and hypercontractivity
//! estimates against grid solutions and empirical measures.
//!
//! Every audit first checks the hypotheses it relies on and refuses, naming
//! the failed check, when one does not hold.

pub mod decay;
pub mod fit;
pub mod functional;
pub mod gradient;
pub mod grid_checks;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{solve, Bc, Field, GridConfig, GridError};
use crate::measures::{MeasureError, MeasureEstimate};
use crate::operator::catalog::PredictedConstants;
use crate::operator::hypotheses::{fd_partial, names, HypothesisReport};
use crate::operator::spec::OperatorSpec;

pub use decay::{audit_asymptotics, audit_lp_decay};
pub use fit::{fit_slope, SlopeFit, SLOPE_SLACK};
pub use functional::{admissible_exponent, audit_hypercontractivity, audit_log_sobolev};
pub use gradient::{audit_c0c1, audit_c1c1, audit_uniform_gradient, C1Variant};
pub use grid_checks::{audit_contraction, audit_cross_check};

/// A named test function.
pub type Datum<'a> = (&'a str, &'a (dyn Fn(&[f64]) -> f64 + Sync));

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("{audit} refused: hypothesis '{hypothesis}' does not hold")]
    Refused { audit: String, hypothesis: String },
    #[error("constant {0} is neither supplied nor computable")]
    MissingConstant(String),
    #[error("no measure at time {0}; run cesaro_measure first")]
    MissingMeasure(f64),
    #[error("datum '{0}' is not compactly supported inside the open half-space")]
    NotCompactlySupported(String),
    #[error("exponent p = {p} is not admissible for q = {q}: p must be <= {bound}")]
    Inadmissible { p: f64, q: f64, bound: f64 },
    #[error("invalid audit input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub function: String,
    pub bc: Option<Bc>,
    pub t: f64,
    pub x: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub coarse_slack: f64,
    pub refined_slack: f64,
    pub non_increasing: bool,
    /// Richardson limit `refined + (refined − coarse)/3`, assuming the error
    /// drops fourfold per refinement step.
    pub extrapolated_slack: f64,
}

impl Refinement {
    pub fn new(coarse_slack: f64, refined_slack: f64, non_increasing: bool) -> Self {
        Refinement {
            coarse_slack,
            refined_slack,
            non_increasing,
            extrapolated_slack: refined_slack + (refined_slack - coarse_slack) / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub audit: String,
    pub variant: Option<String>,
    pub p: Option<f64>,
    pub s: f64,
    pub constants: BTreeMap<String, f64>,
    pub rows: Vec<ProbeRow>,
    /// Largest `lhs − rhs` (for slope audits: largest `slope − bound`).
    pub worst_slack: f64,
    pub tolerance: f64,
    pub refinement: Option<Refinement>,
    pub slopes: Vec<SlopeFit>,
    pub fitted: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl EstimateReport {
    pub fn new(audit: &str, s: f64) -> Self {
        EstimateReport {
            audit: audit.to_string(),
            variant: None,
            p: None,
            s,
            constants: BTreeMap::new(),
            rows: Vec::new(),
            worst_slack: f64::NEG_INFINITY,
            tolerance: 0.0,
            refinement: None,
            slopes: Vec::new(),
            fitted: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            notes: Vec::new(),
        }
    }

    /// Pass iff the worst slack is within tolerance and every slope check passes;
    /// inconclusive slope fits or a slack that grew under refinement make a
    /// failing audit inconclusive rather than failed.
    pub fn decide(&mut self) {
        let slack_ok = self.worst_slack <= self.tolerance;
        let slopes_ok = self.slopes.iter().all(|s| s.pass);
        let slopes_conclusive = self.slopes.iter().all(|s| s.conclusive);
        let refinement_ok = self.refinement.is_none_or(|r| r.non_increasing);
        self.verdict = if slack_ok && slopes_ok {
            Verdict::Pass
        } else if !slopes_conclusive || (!slack_ok && !refinement_ok) {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
    }

    /// CSV of the per-probe rows.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("function,bc,t,x,lhs,rhs,slack\n");
        for r in &self.rows {
            let x: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
            let bc = r.bc.map_or(String::new(), |b| format!("{b:?}").to_lowercase());
            out.push_str(&format!("{},{},{},{},{},{},{}\n", r.function, bc, r.t, x.join(" "), r.lhs, r.rhs, r.slack));
        }
        out
    }
}

/// Everything an audit needs besides its own arguments.
#[derive(Clone, Copy)]
pub struct AuditContext<'a> {
    pub spec: &'a OperatorSpec,
    pub hypotheses: &'a HypothesisReport,
    pub predicted: Option<&'a PredictedConstants>,
    pub grid: &'a GridConfig,
    pub measures: &'a [MeasureEstimate],
}

impl<'a> AuditContext<'a> {
    fn c0(&self) -> f64 {
        if self.spec.structure.potential_zero {
            0.0
        } else {
            self.spec.constants.c0
        }
    }

    fn l0_eta0(&self) -> f64 {
        self.spec.constants.l0 * self.spec.constants.eta0
    }

    fn cp(&self, p: f64) -> Result<f64, EstimateError> {
        self.predicted
            .and_then(|pc| pc.cp(p))
            .or_else(|| self.hypotheses.derived.for_p(p).map(|e| e.cp_empirical))
            .ok_or_else(|| EstimateError::MissingConstant(format!("C_p for p = {p}")))
    }

    fn kp(&self, p: f64) -> Result<f64, EstimateError> {
        self.predicted
            .and_then(|pc| pc.kp(p))
            .or_else(|| self.hypotheses.derived.for_p(p).map(|e| e.kp_empirical))
            .ok_or_else(|| EstimateError::MissingConstant(format!("K_p for p = {p}")))
    }

    fn kappa(&self) -> Option<f64> {
        self.spec.constants.kappa.or_else(|| self.predicted.and_then(|p| p.kappa))
    }

    fn lambda(&self) -> f64 {
        self.spec
            .constants
            .lambda
            .or_else(|| self.predicted.and_then(|p| p.lambda))
            .unwrap_or(self.hypotheses.derived.lambda)
    }

    fn sigma0(&self) -> f64 {
        self.predicted
            .and_then(|p| p.sigma0_definition)
            .unwrap_or(self.hypotheses.derived.sigma0)
    }

    fn measure(&self, t: f64) -> Result<&'a MeasureEstimate, EstimateError> {
        crate::measures::measure_at(self.measures, t).map_err(|_| EstimateError::MissingMeasure(t))
    }

    /// Refuses unless all named checks pass.
    fn require(&self, audit: &str, checks: &[&str]) -> Result<(), EstimateError> {
        match self.hypotheses.first_failure(checks) {
            Some(h) => Err(EstimateError::Refused {
                audit: audit.to_string(),
                hypothesis: h,
            }),
            None => Ok(()),
        }
    }

    fn require_potential_zero(&self, audit: &str) -> Result<(), EstimateError> {
        if !self.spec.structure.potential_zero {
            return Err(EstimateError::Refused {
                audit: audit.to_string(),
                hypothesis: names::POTENTIAL_ZERO.to_string(),
            });
        }
        self.require(audit, &[names::POTENTIAL_ZERO])
    }

    fn require_x_independent(&self, audit: &str) -> Result<(), EstimateError> {
        if !self.spec.structure.diffusion_x_independent {
            return Err(EstimateError::Refused {
                audit: audit.to_string(),
                hypothesis: names::X_INDEPENDENT.to_string(),
            });
        }
        self.require(audit, &[names::X_INDEPENDENT])
    }

    /// Hypotheses on the second-order part and the potential.
    fn basic(&self) -> Vec<String> {
        let mut v = vec![names::ELLIPTICITY.to_string(), names::DIFFUSION_GRADIENT.to_string()];
        if self.hypotheses.check(names::BOUNDARY).is_some() {
            v.push(names::BOUNDARY.to_string());
        }
        if self.spec.structure.potential_zero {
            v.push(names::POTENTIAL_ZERO.to_string());
        } else {
            v.extend([names::POTENTIAL_LOWER, names::POTENTIAL_GRADIENT, names::BETA_VS_POTENTIAL].map(String::from));
        }
        v
    }

    /// `basic` plus dissipativity of the drift.
    fn standing(&self) -> Vec<String> {
        let mut v = self.basic();
        v.extend([names::DISSIPATIVITY_R, names::DISSIPATIVITY_GRAD_B].map(String::from));
        v
    }

    fn require_all(&self, audit: &str, checks: &[String]) -> Result<(), EstimateError> {
        let refs: Vec<&str> = checks.iter().map(String::as_str).collect();
        self.require(audit, &refs)
    }
}

/// Sorted, deduplicated time list after `s`.
fn time_list(s: f64, t_list: &[f64]) -> Result<Vec<f64>, EstimateError> {
    let mut ts: Vec<f64> = t_list.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if ts.is_empty() || ts[0] <= s {
        return Err(EstimateError::Invalid("times must be later than s".into()));
    }
    Ok(ts)
}

fn grid_solve(spec: &OperatorSpec, bc: Bc, f: &(dyn Fn(&[f64]) -> f64 + Sync), s: f64, ts: &[f64], cfg: &GridConfig) -> Result<Field, EstimateError> {
    Ok(solve(spec, bc, f, s, ts, cfg)?)
}

/// Euclidean norm of the finite-difference gradient of a datum.
fn datum_gradient_norm(f: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64]) -> f64 {
    (0..x.len()).map(|a| fd_partial(f, x, a, true).powi(2)).sum::<f64>().sqrt()
}

/// Grid value at `x`, clamping `x` into the box first.
fn field_value(field: &Field, t: f64, x: &[f64]) -> Result<f64, EstimateError> {
    let g = &field.grid;
    let y: Vec<f64> = x.iter().enumerate().map(|(a, v)| v.clamp(g.lower[a], g.upper[a])).collect();
    Ok(field.interpolate(t, &y)?.unwrap_or(0.0))
}

/// `(‖v‖_{L^p(μ)}, stderr)` for nodal values `v` at the points of `μ`,
/// with the stderr propagated from `E|v|^p` by the delta method.
fn lp_norm(mu: &MeasureEstimate, values: &[f64], p: f64) -> (f64, f64) {
    let powered: Vec<f64> = values.iter().map(|v| v.abs().powf(p)).collect();
    let (m, se) = mu.expect_values(&powered);
    if m <= 0.0 {
        return (0.0, 0.0);
    }
    let norm = m.powf(1.0 / p);
    (norm, se * norm / (p * m))
}

/// Per-row statistical tolerances: the reported slack and tolerance come from
/// the row that exceeds its own tolerance the most.
fn set_worst(rep: &mut EstimateReport, tolerances: &[f64]) {
    let worst = rep
        .rows
        .iter()
        .zip(tolerances)
        .max_by(|a, b| (a.0.slack - a.1).total_cmp(&(b.0.slack - b.1)));
    if let Some((row, tol)) = worst {
        rep.worst_slack = row.slack;
        rep.tolerance = *tol;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_rules() {
        let mut r = EstimateReport::new("x", 0.0);
        r.worst_slack = -1.0;
        r.decide();
        assert_eq!(r.verdict, Verdict::Pass);
        r.worst_slack = 1.0;
        r.decide();
        assert_eq!(r.verdict, Verdict::Fail);
        r.refinement = Some(Refinement::new(0.5, 1.0, false));
        r.decide();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }
}
