use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fit::{fit_slope, least_squares};
use super::{datum_gradient_norm, grid_solve, time_list, AuditContext, Datum, EstimateError, EstimateReport, ProbeRow, Refinement, Verdict};
use crate::grid::{gradient, Bc, GridConfig};
use crate::operator::hypotheses::{l_p, names};
use crate::operator::spec::Operator;

/// Which form of the pointwise gradient estimate to audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C1Variant {
    /// `|∇G f|^p ≤ 2^{ℓ_p+p−1} e^{C_p(t−s)} G_N(|f|^p + |∇f|^p)`.
    General,
    /// c ≡ 0: `|∇G f|^p ≤ e^{K_p(t−s)} G_N|∇f|^p`.
    CZero,
    /// p = 1 with x-independent diffusion (or c ≡ 0 and a valid d₀).
    POne,
}

impl C1Variant {
    fn label(self) -> &'static str {
        match self {
            C1Variant::General => "general",
            C1Variant::CZero => "c_zero",
            C1Variant::POne => "p_one",
        }
    }
}

/// Relative noise floor below which a slack change under refinement is ignored.
pub const REFINEMENT_NOISE: f64 = 1e-6;

/// Largest admissible log-log slope of `√(t−s)·‖∇G f‖∞` as `t ↓ s`.
pub const SCALED_EXPONENT_FLOOR: f64 = -0.25;

/// Relative change of a fitted constant under refinement still called stable.
pub const FIT_STABILITY: f64 = 0.2;

#[derive(Clone, Copy)]
enum RhsDatum {
    /// `|f|^p + |∇f|^p`
    ValueAndGradient,
    /// `|∇f|^p`
    Gradient,
}

struct Plan {
    p: f64,
    kind: RhsDatum,
    /// Multiplies the Neumann solve; a function of `t − s`.
    factor: Box<dyn Fn(f64) -> f64>,
    constants: BTreeMap<String, f64>,
    notes: Vec<String>,
}

fn c1c1_plan(ctx: &AuditContext, variant: C1Variant, p: f64) -> Result<Plan, EstimateError> {
    let audit = "c1c1";
    let mut constants = BTreeMap::new();
    let mut notes = Vec::new();
    let mut checks = ctx.basic();
    match variant {
        C1Variant::General => {
            if p <= 1.0 {
                return Err(EstimateError::Invalid("the general estimate needs p > 1".into()));
            }
            if ctx.hypotheses.check(&names::cp_bound(p)).is_some() {
                checks.push(names::cp_bound(p));
            }
            ctx.require_all(audit, &checks)?;
            let cp = ctx.cp(p)?;
            let pre = 2f64.powf(l_p(p) + p - 1.0);
            constants.insert("C_p".into(), cp);
            constants.insert("prefactor".into(), pre);
            Ok(Plan {
                p,
                kind: RhsDatum::ValueAndGradient,
                factor: Box::new(move |tau| pre * (cp * tau).exp()),
                constants,
                notes,
            })
        }
        C1Variant::CZero => {
            if p <= 1.0 {
                return Err(EstimateError::Invalid("the c = 0 estimate needs p > 1".into()));
            }
            ctx.require_potential_zero(audit)?;
            ctx.require_all(audit, &checks)?;
            let kp = ctx.kp(p)?;
            constants.insert("K_p".into(), kp);
            Ok(Plan {
                p,
                kind: RhsDatum::Gradient,
                factor: Box::new(move |tau| (kp * tau).exp()),
                constants,
                notes,
            })
        }
        C1Variant::POne => {
            if p != 1.0 {
                notes.push(format!("p_one variant audits p = 1 (requested {p})"));
            }
            if ctx.spec.structure.potential_zero {
                ctx.require_all(audit, &checks)?;
                if ctx.spec.structure.diffusion_x_independent {
                    ctx.require_x_independent(audit)?;
                    let rate = ctx.l0_eta0();
                    constants.insert("L0_eta0".into(), rate);
                    Ok(Plan {
                        p: 1.0,
                        kind: RhsDatum::Gradient,
                        factor: Box::new(move |tau| (-rate * tau).exp()),
                        constants,
                        notes,
                    })
                } else {
                    let d0 = ctx.spec.constants.d0.ok_or_else(|| EstimateError::Refused {
                        audit: audit.into(),
                        hypothesis: names::X_INDEPENDENT.into(),
                    })?;
                    ctx.require(audit, &[names::D0_CONDITION])?;
                    constants.insert("d0".into(), d0);
                    Ok(Plan {
                        p: 1.0,
                        kind: RhsDatum::Gradient,
                        factor: Box::new(move |tau| (d0 * tau).exp()),
                        constants,
                        notes,
                    })
                }
            } else {
                ctx.require_x_independent(audit)?;
                checks.push(names::BETA_VS_SQRT_R.into());
                ctx.require_all(audit, &checks)?;
                let kappa = ctx.kappa().ok_or_else(|| EstimateError::MissingConstant("kappa".into()))?;
                constants.insert("kappa".into(), kappa);
                Ok(Plan {
                    p: 1.0,
                    kind: RhsDatum::ValueAndGradient,
                    factor: Box::new(move |tau| 2.0 * (kappa * kappa * tau).exp()),
                    constants,
                    notes,
                })
            }
        }
    }
}

/// Whether `f` vanishes on the wall at the projections of the probes.
fn vanishes_on_wall(f: &(dyn Fn(&[f64]) -> f64 + Sync), probes: &[Vec<f64>]) -> bool {
    probes.iter().all(|x| {
        let mut y = x.clone();
        *y.last_mut().unwrap() = 0.0;
        f(&y).abs() <= 1e-9
    })
}

fn check_probes(cfg: &GridConfig, dim: usize, probes: &[Vec<f64>]) -> Result<(), EstimateError> {
    let grid = crate::grid::Grid::for_domain(dim, cfg.radius, cfg.nodes.clone(), false);
    if probes.is_empty() || probes.iter().any(|x| x.len() != dim || !grid.contains(x)) {
        return Err(EstimateError::Invalid("probe points must lie inside the grid box".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn c1c1_rows(
    ctx: &AuditContext,
    plan: &Plan,
    bc: Bc,
    data: &[Datum],
    s: f64,
    ts: &[f64],
    probes: &[Vec<f64>],
    cfg: &GridConfig,
) -> Result<Vec<ProbeRow>, EstimateError> {
    let (p, kind) = (plan.p, plan.kind);
    let mut rows = Vec::new();
    for (name, f) in data {
        let u = grid_solve(ctx.spec, bc, *f, s, ts, cfg)?;
        let g = |x: &[f64]| {
            let grad = datum_gradient_norm(*f, x).powf(p);
            match kind {
                RhsDatum::ValueAndGradient => f(x).abs().powf(p) + grad,
                RhsDatum::Gradient => grad,
            }
        };
        let w = grid_solve(ctx.spec, Bc::Neumann, &g, s, ts, cfg)?;
        for &t in ts {
            let grad = gradient(&u, t)?;
            let factor = (plan.factor)(t - s);
            for x in probes {
                let gv = grad.interpolate(x).expect("probe checked");
                let lhs = gv.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p);
                let rhs = factor * w.interpolate(t, x)?.expect("probe checked");
                rows.push(ProbeRow {
                    function: name.to_string(),
                    bc: Some(bc),
                    t,
                    x: x.clone(),
                    lhs,
                    rhs,
                    slack: lhs - rhs,
                });
            }
        }
    }
    Ok(rows)
}

fn max_slack(rows: &[ProbeRow]) -> f64 {
    rows.iter().map(|r| r.slack).fold(f64::NEG_INFINITY, f64::max)
}

/// Fills slack, tolerance and refinement from a coarse and a refined pass
/// evaluated at the same probes; the refined rows are kept.
fn finish_pointwise(rep: &mut EstimateReport, coarse: Vec<ProbeRow>, fine: Vec<ProbeRow>) {
    let discrepancy = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a.lhs - b.lhs).abs() + (a.rhs - b.rhs).abs())
        .fold(0.0, f64::max);
    let scale = fine.iter().map(|r| r.lhs.abs().max(r.rhs.abs())).fold(0.0, f64::max);
    let (cs, fs) = (max_slack(&coarse), max_slack(&fine));
    rep.tolerance = 2.0 * discrepancy;
    rep.worst_slack = fs;
    rep.refinement = Some(Refinement::new(cs, fs, fs <= cs + REFINEMENT_NOISE * (1.0 + scale)));
    rep.rows = fine;
    rep.decide();
}

/// Audits the pointwise gradient estimate at the probe points and times.
#[allow(clippy::too_many_arguments)]
pub fn audit_c1c1(
    ctx: &AuditContext,
    variant: C1Variant,
    bc: Bc,
    p: f64,
    data: &[Datum],
    s: f64,
    t_list: &[f64],
    probes: &[Vec<f64>],
) -> Result<EstimateReport, EstimateError> {
    let plan = c1c1_plan(ctx, variant, p)?;
    let ts = time_list(s, t_list)?;
    check_probes(ctx.grid, ctx.spec.dim(), probes)?;
    let mut rep = EstimateReport::new("c1c1", s);
    rep.variant = Some(variant.label().into());
    rep.p = Some(plan.p);
    rep.constants = plan.constants.clone();
    rep.notes = plan.notes.clone();
    if bc == Bc::Dirichlet {
        for (name, f) in data {
            if !vanishes_on_wall(*f, probes) {
                rep.notes.push(format!("datum '{name}' does not vanish on the wall and is outside the Dirichlet class"));
            }
        }
    }
    let coarse = c1c1_rows(ctx, &plan, bc, data, s, &ts, probes, ctx.grid)?;
    let fine = c1c1_rows(ctx, &plan, bc, data, s, &ts, probes, &ctx.grid.refined())?;
    finish_pointwise(&mut rep, coarse, fine);
    Ok(rep)
}

fn node_in_ball(grid: &crate::grid::Grid, node: usize, radius: f64, buf: &mut [f64]) -> bool {
    grid.node_coords(node, buf);
    buf.iter().map(|v| v * v).sum::<f64>() <= radius * radius
}

/// Largest gradient norm over nodes within `radius`, with its location.
fn sup_gradient(u: &crate::grid::Field, t: f64, radius: f64) -> Result<(f64, Vec<f64>), EstimateError> {
    let grad = gradient(u, t)?;
    let d = u.grid.dim();
    let mut buf = vec![0.0; d];
    let mut best = (0.0, vec![0.0; d]);
    for node in 0..u.grid.len() {
        if node_in_ball(&u.grid, node, radius, &mut buf) {
            let n = grad.norm_at(node);
            if n > best.0 {
                best = (n, buf.clone());
            }
        }
    }
    Ok(best)
}

/// `(‖f‖∞, ‖∇f‖∞)` sampled on the grid nodes.
fn datum_norms(f: &(dyn Fn(&[f64]) -> f64 + Sync), grid: &crate::grid::Grid) -> (f64, f64) {
    let mut buf = vec![0.0; grid.dim()];
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for node in 0..grid.len() {
        grid.node_coords(node, &mut buf);
        a = a.max(f(&buf).abs());
        b = b.max(datum_gradient_norm(f, &buf));
    }
    (a, b)
}

#[allow(clippy::too_many_arguments)]
fn uniform_rows(
    ctx: &AuditContext,
    bc: Bc,
    data: &[Datum],
    s: f64,
    ts: &[f64],
    radius: f64,
    cfg: &GridConfig,
    bound: &dyn Fn(f64, f64, f64) -> f64,
) -> Result<Vec<ProbeRow>, EstimateError> {
    let mut rows = Vec::new();
    for (name, f) in data {
        let u = grid_solve(ctx.spec, bc, *f, s, ts, cfg)?;
        let (sup_f, sup_grad) = datum_norms(*f, &u.grid);
        for &t in ts {
            let (lhs, x) = sup_gradient(&u, t, radius)?;
            let rhs = bound(t - s, sup_f, sup_grad);
            rows.push(ProbeRow {
                function: name.to_string(),
                bc: Some(bc),
                t,
                x,
                lhs,
                rhs,
                slack: lhs - rhs,
            });
        }
    }
    Ok(rows)
}

/// Audits the uniform gradient bound `‖∇G f‖∞ ≤ … ‖f‖_{C¹_b}` over the nodes
/// within `radius`.
pub fn audit_uniform_gradient(
    ctx: &AuditContext,
    variant: C1Variant,
    bc: Bc,
    data: &[Datum],
    s: f64,
    t_list: &[f64],
    radius: f64,
) -> Result<EstimateReport, EstimateError> {
    let audit = "uniform_gradient";
    let ts = time_list(s, t_list)?;
    let c0 = ctx.c0();
    let mut rep = EstimateReport::new(audit, s);
    rep.variant = Some(variant.label().into());
    rep.constants.insert("c0".into(), c0);
    let mut checks = ctx.basic();
    // exponential rate of the bound, the target of the decay fit
    let rate_target;
    let bound: Box<dyn Fn(f64, f64, f64) -> f64> = match variant {
        C1Variant::General => {
            if ctx.hypotheses.check(&names::cp_bound(2.0)).is_some() {
                checks.push(names::cp_bound(2.0));
            }
            ctx.require_all(audit, &checks)?;
            let c2 = ctx.cp(2.0)?;
            rep.constants.insert("C_2".into(), c2);
            rate_target = (c2 - c0) / 2.0;
            Box::new(move |tau, a, b| 2.0 * ((c2 - c0) * tau / 2.0).exp() * (a + b))
        }
        C1Variant::POne => {
            ctx.require_x_independent(audit)?;
            if !ctx.spec.structure.potential_zero {
                checks.push(names::BETA_VS_SQRT_R.into());
            }
            ctx.require_all(audit, &checks)?;
            let kappa = ctx.kappa().ok_or_else(|| EstimateError::MissingConstant("kappa".into()))?;
            rep.constants.insert("kappa".into(), kappa);
            rate_target = kappa * kappa - c0;
            Box::new(move |tau, a, b| ((kappa * kappa - c0) * tau).exp() * (a + b))
        }
        C1Variant::CZero => {
            ctx.require_potential_zero(audit)?;
            ctx.require_x_independent(audit)?;
            ctx.require_all(audit, &checks)?;
            let rate = ctx.l0_eta0();
            rep.constants.insert("L0_eta0".into(), rate);
            rate_target = -(rate + c0);
            Box::new(move |tau, _a, b| (-(rate + c0) * tau).exp() * b)
        }
    };
    let coarse = uniform_rows(ctx, bc, data, s, &ts, radius, ctx.grid, &*bound)?;
    let fine = uniform_rows(ctx, bc, data, s, &ts, radius, &ctx.grid.refined(), &*bound)?;
    // The c ≡ 0 bound is a genuine decay rate; with three or more times, fit it.
    if variant == C1Variant::CZero && ts.len() >= 3 {
        for (name, _) in data {
            let (tau, y): (Vec<f64>, Vec<f64>) =
                fine.iter().filter(|r| r.function == *name).map(|r| (r.t, r.lhs)).unzip();
            rep.slopes.push(fit_slope(name, &tau, &y, rate_target));
        }
    }
    finish_pointwise(&mut rep, coarse, fine);
    Ok(rep)
}

/// Rows of `|∇G_J f|^p` against `e^{ω(t−s)}(t−s)^{−p/2} G_N|f|^p`, plus the
/// scaled uniform gradient `√(t−s)·‖∇G_J f‖∞` per datum and time.
#[allow(clippy::too_many_arguments)]
fn c0c1_pass(
    ctx: &AuditContext,
    bc: Bc,
    p: f64,
    omega: f64,
    data: &[Datum],
    s: f64,
    ts: &[f64],
    probes: &[Vec<f64>],
    radius: f64,
    cfg: &GridConfig,
) -> Result<(Vec<(ProbeRow, f64)>, Vec<Vec<f64>>), EstimateError> {
    let mut rows = Vec::new();
    let mut scaled = Vec::new();
    for (name, f) in data {
        let u = grid_solve(ctx.spec, bc, *f, s, ts, cfg)?;
        let g = |x: &[f64]| f(x).abs().powf(p);
        let w = grid_solve(ctx.spec, Bc::Neumann, &g, s, ts, cfg)?;
        let mut sc = Vec::with_capacity(ts.len());
        for &t in ts {
            let tau = t - s;
            let grad = gradient(&u, t)?;
            let weight = (omega * tau).exp() * tau.powf(-p / 2.0);
            for x in probes {
                let gv = grad.interpolate(x).expect("probe checked");
                let lhs = gv.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p);
                let base = weight * w.interpolate(t, x)?.expect("probe checked");
                rows.push((
                    ProbeRow {
                        function: name.to_string(),
                        bc: Some(bc),
                        t,
                        x: x.clone(),
                        lhs,
                        rhs: f64::NAN,
                        slack: f64::NAN,
                    },
                    base,
                ));
            }
            sc.push(sup_gradient(&u, t, radius)?.0 * tau.sqrt());
        }
        scaled.push(sc);
    }
    Ok((rows, scaled))
}

/// Smallest constant making every row hold: `max lhs / base`.
fn fitted_constant(rows: &[(ProbeRow, f64)]) -> f64 {
    let top = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    rows.iter()
        .filter(|r| r.1 > 1e-12 * top)
        .map(|r| r.0.lhs / r.1)
        .fold(0.0, f64::max)
}

/// Margin added to `min{C_p, 0}` when choosing the exponent ω.
pub const OMEGA_MARGIN: f64 = 0.1;

/// Audits the short-time smoothing estimate `|∇G f|^p ≤ c_p e^{ω(t−s)}
/// (t−s)^{−p/2} G_N|f|^p`. With no supplied `c_p` the constant is fitted on a
/// coarse and a refined grid; the audit passes when the fit is stable within
/// 20% and `√(t−s)·‖∇G f‖∞` stays bounded as `t ↓ s`.
#[allow(clippy::too_many_arguments)]
pub fn audit_c0c1(
    ctx: &AuditContext,
    bc: Bc,
    p: f64,
    data: &[Datum],
    s: f64,
    t_list: &[f64],
    probes: &[Vec<f64>],
    radius: f64,
    supplied_cp: Option<f64>,
) -> Result<EstimateReport, EstimateError> {
    let audit = "c0c1";
    ctx.require_all(audit, &ctx.basic())?;
    let ts = time_list(s, t_list)?;
    if ts.len() < 2 {
        return Err(EstimateError::Invalid("c0c1 needs at least two times".into()));
    }
    check_probes(ctx.grid, ctx.spec.dim(), probes)?;
    let cp = ctx.cp(p)?;
    let omega = cp.min(0.0) + OMEGA_MARGIN;
    let mut rep = EstimateReport::new(audit, s);
    rep.p = Some(p);
    rep.constants.insert("C_p".into(), cp);
    rep.constants.insert("omega".into(), omega);
    if ctx.hypotheses.first_failure(&[names::DISSIPATIVITY_R, names::DISSIPATIVITY_GRAD_B]).is_some() {
        rep.notes.push("drift dissipativity does not hold; only the short-time estimate is audited".into());
    }

    let (coarse, _) = c0c1_pass(ctx, bc, p, omega, data, s, &ts, probes, radius, ctx.grid)?;
    let (fine, scaled) = c0c1_pass(ctx, bc, p, omega, data, s, &ts, probes, radius, &ctx.grid.refined())?;
    let (fit_c, fit_f) = (fitted_constant(&coarse), fitted_constant(&fine));
    rep.fitted.insert("c_p_coarse".into(), fit_c);
    rep.fitted.insert("c_p_refined".into(), fit_f);
    let stable = (fit_c - fit_f).abs() <= FIT_STABILITY * fit_f.abs().max(f64::MIN_POSITIVE);

    let log_tau: Vec<f64> = ts.iter().map(|t| (t - s).ln()).collect();
    let mut bounded = true;
    for ((name, _), sc) in data.iter().zip(&scaled) {
        let pts: Vec<(f64, f64)> = log_tau.iter().zip(sc).filter(|(_, v)| **v > 0.0).map(|(a, v)| (*a, v.ln())).collect();
        if pts.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let line = least_squares(&x, &y);
            rep.fitted.insert(format!("scaled_exponent:{name}"), line.slope);
            bounded &= line.slope >= SCALED_EXPONENT_FLOOR;
        }
        let peak = sc.iter().copied().fold(0.0, f64::max);
        rep.fitted.insert(format!("scaled_sup:{name}"), peak);
    }

    let c = supplied_cp.unwrap_or(fit_f);
    if let Some(v) = supplied_cp {
        rep.constants.insert("c_p".into(), v);
    }
    let finish = |rows: Vec<(ProbeRow, f64)>| -> Vec<ProbeRow> {
        rows.into_iter()
            .map(|(mut r, base)| {
                r.rhs = c * base;
                r.slack = r.lhs - r.rhs;
                r
            })
            .collect()
    };
    finish_pointwise(&mut rep, finish(coarse), finish(fine));
    if !stable {
        rep.notes.push(format!("fitted c_p changed from {fit_c} to {fit_f} under refinement"));
    }
    if !bounded {
        rep.notes.push("sqrt(t-s) times the sup gradient grows as t approaches s".into());
    }
    rep.verdict = match rep.verdict {
        Verdict::Pass if !bounded => Verdict::Fail,
        Verdict::Pass if !stable => Verdict::Inconclusive,
        v => v,
    };
    Ok(rep)
}
