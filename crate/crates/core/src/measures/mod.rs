//! Empirical evolution systems of measures for the Neumann operator: Cesàro
//! (occupation) averages of the folded diffusion, propagation between times,
//! and invariance / moment / tightness diagnostics.

pub mod estimate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Bc;
use crate::operator::spec::Operator;
use crate::stochastic::{
    derive_seed, fk_values, regime_for, simulate_cloud, simulate_horizons, simulate_snapshots, McConfig, McError, Regime,
};

pub use estimate::{ks_two_sample, sup_cdf_distance, weighted_block_stats, Histogram, MeasureEstimate, Provenance};

/// Largest tolerated fraction of blown-up particles in a Cesàro measure.
pub const MAX_BLOWUP_FRACTION: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("the measure construction requires c ≡ 0 (G_N(t,s)1 = 1 fails otherwise)")]
    PotentialNotZero,
    #[error("{count} particles ({fraction:.3}) blew up; more than 1% is treated as failure")]
    BlowUp { count: usize, fraction: f64 },
    #[error("no measure available at time {0}; build it with cesaro_measure first")]
    MissingMeasure(f64),
    #[error("cannot propagate a measure of a nonautonomous operator from time {from} to the later time {to}")]
    Direction { from: f64, to: f64 },
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mc(#[from] McError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CesaroOptions {
    /// Fraction of the window discarded at the start.
    pub burn_in: f64,
    /// Occupation snapshots per path (autonomous operators only).
    pub snapshots: usize,
}

impl Default for CesaroOptions {
    fn default() -> Self {
        CesaroOptions {
            burn_in: 0.2,
            snapshots: 16,
        }
    }
}

fn check_blowups(count: usize, total: usize) -> Result<(), MeasureError> {
    let fraction = count as f64 / total as f64;
    if fraction > MAX_BLOWUP_FRACTION {
        return Err(MeasureError::BlowUp { count, fraction });
    }
    Ok(())
}

/// Time-averaged law of the folded diffusion started at `x0`, i.e. an
/// estimate of `μ_s`.
///
/// Autonomous operators: occupation snapshots of each path over the window
/// after burn-in. Otherwise each particle gets its own horizon `τ_i`, stratified
/// over the window, and runs from coefficient time `s + τ_i` down to `s`.
pub fn cesaro_measure(
    op: &dyn Operator,
    s: f64,
    x0: &[f64],
    horizon: f64,
    cfg: &McConfig,
    opts: &CesaroOptions,
) -> Result<MeasureEstimate, MeasureError> {
    if !op.structure().potential_zero {
        return Err(MeasureError::PotentialNotZero);
    }
    if !(horizon > 0.0) || !(0.0..1.0).contains(&opts.burn_in) || opts.snapshots == 0 {
        return Err(MeasureError::Invalid("need horizon > 0, burn_in in [0,1), snapshots >= 1".into()));
    }
    let d = op.dim();
    let start = opts.burn_in * horizon;
    let window = horizon - start;
    let provenance = |blowups| Provenance::Cesaro {
        s,
        x0: x0.to_vec(),
        horizon,
        burn_in: opts.burn_in,
        blowups,
    };
    let n = cfg.particles;
    let (points, alive_mask, block, blowups) = if op.structure().autonomous {
        let k = opts.snapshots;
        let times: Vec<f64> = (1..=k).map(|j| start + window * j as f64 / k as f64).collect();
        let (ens, snaps) = simulate_snapshots(op, Regime::Folded, s, s + horizon, x0, cfg, &times)?;
        let mask: Vec<bool> = ens.blown_up.iter().flat_map(|b| std::iter::repeat_n(!b, k)).collect();
        (snaps, mask, k, ens.blowup_count())
    } else {
        let horizons: Vec<f64> = (0..n).map(|i| start + window * (i as f64 + 0.5) / n as f64).collect();
        let ens = simulate_horizons(op, Regime::Folded, s, &horizons, x0, cfg)?;
        let mask = ens.blown_up.iter().map(|b| !b).collect();
        let c = ens.blowup_count();
        (ens.states, mask, 1, c)
    };
    check_blowups(blowups, n)?;
    // blown-up paths keep their slots with zero weight so blocks stay aligned
    let weights: Vec<f64> = alive_mask.iter().map(|a| if *a { 1.0 } else { 0.0 }).collect();
    let points = points
        .chunks(d)
        .zip(&alive_mask)
        .flat_map(|(p, a)| if *a { p.to_vec() } else { vec![0.0; d] })
        .collect();
    MeasureEstimate::new(d, s, points, weights, block, provenance(blowups))
}

/// Propagates `μ_from` to the earlier time `target` by evolving each particle
/// with the folded dynamics over coefficient times `from → target`
/// (`⟨μ_target, f⟩ = ⟨μ_from, G_N(from, target) f⟩`). Autonomous operators
/// allow either direction.
pub fn pushforward(measure: &MeasureEstimate, op: &dyn Operator, target: f64, cfg: &McConfig) -> Result<MeasureEstimate, MeasureError> {
    if !op.structure().potential_zero {
        return Err(MeasureError::PotentialNotZero);
    }
    let from = measure.time;
    if target > from && !op.structure().autonomous {
        return Err(MeasureError::Direction { from, to: target });
    }
    if target == from {
        return Ok(measure.clone());
    }
    let (lo, hi) = if target < from { (target, from) } else { (from, target) };
    let ens = simulate_cloud(op, Regime::Folded, lo, hi, &measure.points, cfg)?;
    let blowups = ens.blowup_count();
    let weights = measure
        .weights
        .iter()
        .zip(&ens.blown_up)
        .map(|(w, b)| if *b { 0.0 } else { *w })
        .collect();
    MeasureEstimate::new(
        measure.dim,
        target,
        ens.states,
        weights,
        measure.block,
        Provenance::Pushforward { from_time: from, blowups },
    )
}

/// Finds the member of a family at time `t`.
pub fn measure_at(family: &[MeasureEstimate], t: f64) -> Result<&MeasureEstimate, MeasureError> {
    family
        .iter()
        .find(|m| (m.time - t).abs() <= 1e-9 * (1.0 + t.abs()))
        .ok_or(MeasureError::MissingMeasure(t))
}

pub type TestFn<'a> = (&'a str, &'a (dyn Fn(&[f64]) -> f64 + Sync));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpContraction {
    pub p: f64,
    /// `‖G(t,s)f‖_{L^p(μ_t)}`
    pub lhs: f64,
    /// `‖f‖_{L^p(μ_s)}`
    pub rhs: f64,
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub bc: Bc,
    pub function: String,
    pub s: f64,
    pub t: f64,
    /// `⟨μ_t, G(t,s)f⟩`
    pub lhs: f64,
    /// `⟨μ_s, f⟩`
    pub rhs: f64,
    /// `lhs − rhs`
    pub residual: f64,
    pub combined_stderr: f64,
    /// Neumann: `|residual| ≤ 3σ`; Dirichlet: `residual ≤ 3σ`.
    pub pass: bool,
    pub lp: Option<LpContraction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpOptions {
    pub p: f64,
    /// Number of support points of `μ_t` at which `G(t,s)f` is estimated.
    pub points: usize,
    /// Paths per support point.
    pub inner: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            p: 2.0,
            points: 2000,
            inner: 32,
        }
    }
}

fn combine(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// Invariance (Neumann) or sub-invariance (Dirichlet) residuals of a measure
/// family, plus the `L^p` contraction when requested.
pub fn invariance_residual(
    family: &[MeasureEstimate],
    op: &dyn Operator,
    bc: Bc,
    fs: &[TestFn<'_>],
    pairs: &[(f64, f64)],
    cfg: &McConfig,
    lp: Option<&LpOptions>,
) -> Result<Vec<InvarianceRow>, MeasureError> {
    let mut rows = Vec::new();
    for (k, &(s, t)) in pairs.iter().enumerate() {
        if !(t >= s) {
            return Err(MeasureError::Invalid(format!("pair ({s}, {t}) needs s <= t")));
        }
        let mu_t = measure_at(family, t)?;
        let mu_s = measure_at(family, s)?;
        let run_cfg = McConfig {
            seed: derive_seed(cfg.seed, &format!("invariance/{bc:?}/{k}")),
            ..cfg.clone()
        };
        let ens = simulate_cloud(op, regime_for(bc), s, t, &mu_t.points, &run_cfg)?;
        let lp_data = match lp {
            Some(o) => Some(lp_paths(mu_t, op, bc, s, t, o, &run_cfg)?),
            None => None,
        };
        for (name, f) in fs {
            let vals = fk_values(&ens, f);
            let (lhs, se_l) = mu_t.expect_values(&vals);
            let (rhs, se_r) = mu_s.expect_with_stderr(f);
            let residual = lhs - rhs;
            let sigma = combine(se_l, se_r);
            let pass = match bc {
                Bc::Dirichlet => residual <= 3.0 * sigma,
                _ => residual.abs() <= 3.0 * sigma,
            };
            let lp_row = match (&lp_data, lp) {
                (Some(data), Some(o)) => Some(lp_contraction(data, mu_s, f, o)),
                _ => None,
            };
            rows.push(InvarianceRow {
                bc,
                function: name.to_string(),
                s,
                t,
                lhs,
                rhs,
                residual,
                combined_stderr: sigma,
                pass,
                lp: lp_row,
            });
        }
    }
    Ok(rows)
}

struct LpPaths {
    ens: crate::stochastic::PathEnsemble,
    weights: Vec<f64>,
    inner: usize,
}

fn lp_paths(mu_t: &MeasureEstimate, op: &dyn Operator, bc: Bc, s: f64, t: f64, o: &LpOptions, cfg: &McConfig) -> Result<LpPaths, MeasureError> {
    let n = mu_t.len();
    let stride = n.div_ceil(o.points.max(1)).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut starts = Vec::with_capacity(idx.len() * o.inner * mu_t.dim);
    for &i in &idx {
        for _ in 0..o.inner {
            starts.extend_from_slice(mu_t.point(i));
        }
    }
    let ens = simulate_cloud(op, regime_for(bc), s, t, &starts, &McConfig { seed: derive_seed(cfg.seed, "lp"), ..cfg.clone() })?;
    Ok(LpPaths {
        ens,
        weights: idx.iter().map(|&i| mu_t.weights[i]).collect(),
        inner: o.inner,
    })
}

fn lp_contraction(data: &LpPaths, mu_s: &MeasureEstimate, f: &(dyn Fn(&[f64]) -> f64 + Sync), o: &LpOptions) -> LpContraction {
    let vals = fk_values(&data.ens, f);
    let pointwise: Vec<f64> = vals
        .chunks(data.inner)
        .map(|c| {
            let (mean, se) = crate::stochastic::mean_and_stderr(c);
            let raw = mean.abs().powf(o.p);
            // remove the inner-sampling bias of mean² exactly when p = 2
            if o.p == 2.0 && data.inner > 1 {
                raw - se * se
            } else {
                raw
            }
        })
        .collect();
    let (lhs_p, se_l) = weighted_block_stats(&pointwise, &data.weights, 1);
    let (rhs_p, se_r) = mu_s.expect_with_stderr(&|x| f(x).abs().powf(o.p));
    let lhs = lhs_p.max(0.0).powf(1.0 / o.p);
    let rhs = rhs_p.powf(1.0 / o.p);
    // delta method for the p-th root
    let d = |v: f64, se: f64| if v > 0.0 { se * v.powf(1.0 / o.p - 1.0) / o.p } else { se.powf(1.0 / o.p) };
    let stderr = combine(d(lhs_p, se_l), d(rhs_p, se_r));
    LpContraction {
        p: o.p,
        lhs,
        rhs,
        stderr,
        pass: lhs <= rhs + 3.0 * stderr,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub p: f64,
    /// `⟨μ, 1 + |x|^{2p}⟩`
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r: f64,
    pub mass: f64,
    /// `⟨μ, φ₁⟩ / r²`
    pub chebyshev_bound: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub time: f64,
    pub moments: Vec<MomentRow>,
    pub tails: Vec<TailRow>,
}

/// Moments of `φ_p` and tail masses with the Chebyshev cross-check.
pub fn moment_diagnostics(measure: &MeasureEstimate, p_list: &[f64], r_list: &[f64]) -> MomentReport {
    let moments = p_list
        .iter()
        .map(|&p| {
            let (value, stderr) = measure.phi_moment(p);
            MomentRow { p, value, stderr }
        })
        .collect();
    let phi1 = measure.phi_moment(1.0).0;
    let tails = r_list
        .iter()
        .map(|&r| {
            let mass = measure.tail_mass(r);
            let chebyshev_bound = phi1 / (r * r);
            TailRow {
                r,
                mass,
                chebyshev_bound,
                consistent: mass <= chebyshev_bound + 1e-12,
            }
        })
        .collect();
    MomentReport {
        time: measure.time,
        moments,
        tails,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::catalog;

    #[test]
    fn rejects_potential() {
        let (heat, _) = catalog::heat(1, 0.5);
        let cfg = McConfig::new(10, 0.1, 1);
        assert_eq!(
            cesaro_measure(&heat, 0.0, &[1.0], 1.0, &cfg, &CesaroOptions::default()),
            Err(MeasureError::PotentialNotZero)
        );
    }

    #[test]
    fn zero_duration_pushforward_is_identity() {
        let (ou, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let m = MeasureEstimate::uniform(1, 2.0, vec![0.1, 0.5, 2.0], 1, Provenance::Cloud).unwrap();
        let cfg = McConfig::new(1, 0.01, 1);
        assert_eq!(pushforward(&m, &ou, 2.0, &cfg).unwrap(), m);
    }

    #[test]
    fn constant_function_invariance() {
        let (ou, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let cfg = McConfig::new(400, 0.01, 3);
        let mu = cesaro_measure(&ou, 0.0, &[0.5], 4.0, &cfg, &CesaroOptions::default()).unwrap();
        let mut later = mu.clone();
        later.time = 1.0;
        let fam = [mu, later];
        let one = |_: &[f64]| 1.0;
        let n = invariance_residual(&fam, &ou, Bc::Neumann, &[("one", &one)], &[(0.0, 1.0)], &cfg, None).unwrap();
        assert_eq!(n[0].residual, 0.0);
        let d = invariance_residual(&fam, &ou, Bc::Dirichlet, &[("one", &one)], &[(0.0, 1.0)], &cfg, None).unwrap();
        assert!(d[0].residual < 0.0);
        assert!(matches!(
            invariance_residual(&fam, &ou, Bc::Neumann, &[("one", &one)], &[(0.0, 2.0)], &cfg, None),
            Err(MeasureError::MissingMeasure(_))
        ));
    }
}
