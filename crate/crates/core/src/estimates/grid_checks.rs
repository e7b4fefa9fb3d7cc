use super::{grid_solve, set_worst, time_list, AuditContext, Datum, EstimateError, EstimateReport, ProbeRow, Verdict};
use crate::grid::Bc;
use crate::stochastic::{derive_seed, feynman_kac, McConfig};

/// Absolute allowance on the sup-norm contraction.
pub const CONTRACTION_TOL: f64 = 1e-6;
/// Absolute allowance on the nodewise ordering `G_D f ≤ G_N f`.
pub const ORDERING_TOL: f64 = 1e-8;
/// Fraction of probes at which grid and Monte Carlo must agree.
pub const AGREEMENT_FRACTION: f64 = 0.95;

/// Checks `‖G_J f‖∞ ≤ e^{−c₀(t−s)}‖f‖∞` for both boundary conditions and,
/// for nonnegative data, `G_D f ≤ G_N f` at every node.
pub fn audit_contraction(ctx: &AuditContext, data: &[Datum], s: f64, t_list: &[f64]) -> Result<EstimateReport, EstimateError> {
    let audit = "contraction";
    ctx.require_all(audit, &ctx.basic())?;
    let ts = time_list(s, t_list)?;
    let c0 = ctx.c0();
    let mut rep = EstimateReport::new(audit, s);
    rep.constants.insert("c0".into(), c0);
    let mut tols = Vec::new();
    for (name, f) in data {
        let un = grid_solve(ctx.spec, Bc::Neumann, *f, s, &ts, ctx.grid)?;
        let ud = grid_solve(ctx.spec, Bc::Dirichlet, *f, s, &ts, ctx.grid)?;
        let initial = &un.values[0];
        let sup_f = initial.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let nonnegative = initial.iter().all(|v| *v >= 0.0);
        for &t in &ts {
            let bound = (-c0 * (t - s)).exp() * sup_f;
            for (bc, u) in [(Bc::Neumann, &un), (Bc::Dirichlet, &ud)] {
                let lhs = u.max_norm(t)?;
                rep.rows.push(ProbeRow {
                    function: name.to_string(),
                    bc: Some(bc),
                    t,
                    x: Vec::new(),
                    lhs,
                    rhs: bound,
                    slack: lhs - bound,
                });
                tols.push(CONTRACTION_TOL);
            }
            if nonnegative {
                let gap = ud.at(t)?.iter().zip(un.at(t)?).map(|(d, n)| d - n).fold(f64::NEG_INFINITY, f64::max);
                rep.rows.push(ProbeRow {
                    function: format!("{name}:ordering"),
                    bc: None,
                    t,
                    x: Vec::new(),
                    lhs: gap,
                    rhs: 0.0,
                    slack: gap,
                });
                tols.push(ORDERING_TOL);
            }
        }
        if !nonnegative {
            rep.notes.push(format!("{name} changes sign; ordering not checked"));
        }
    }
    set_worst(&mut rep, &tols);
    rep.verdict = if rep.rows.iter().zip(&tols).all(|(r, t)| r.slack <= *t) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(rep)
}

/// Compares grid values with Feynman–Kac estimates at the probes; passes when
/// `|grid − MC| ≤ 3·stderr + 2·(coarse/refined grid discrepancy)` at 95% of them.
#[allow(clippy::too_many_arguments)]
pub fn audit_cross_check(
    ctx: &AuditContext,
    bc: Bc,
    data: &[Datum],
    s: f64,
    t: f64,
    probes: &[Vec<f64>],
    mc: &McConfig,
) -> Result<EstimateReport, EstimateError> {
    let audit = "cross_check";
    ctx.require_all(audit, &ctx.basic())?;
    let ts = time_list(s, &[t])?;
    let mut rep = EstimateReport::new(audit, s);
    let fine_cfg = ctx.grid.refined();
    let mut tols = Vec::new();
    for (name, f) in data {
        let coarse = grid_solve(ctx.spec, bc, *f, s, &ts, ctx.grid)?;
        let fine = grid_solve(ctx.spec, bc, *f, s, &ts, &fine_cfg)?;
        for (i, x) in probes.iter().enumerate() {
            let (Some(gc), Some(gf)) = (coarse.interpolate(t, x)?, fine.interpolate(t, x)?) else {
                return Err(EstimateError::Invalid("probe points must lie inside the grid box".into()));
            };
            let cfg = McConfig {
                seed: derive_seed(mc.seed, &format!("{name}:{i}")),
                ..mc.clone()
            };
            let est = feynman_kac(ctx.spec, bc, *f, s, t, x, &cfg).map_err(|e| EstimateError::Measure(e.into()))?;
            let gap = (gf - est.estimate).abs();
            rep.rows.push(ProbeRow {
                function: name.to_string(),
                bc: Some(bc),
                t,
                x: x.clone(),
                lhs: gf,
                rhs: est.estimate,
                slack: gap,
            });
            tols.push(3.0 * est.stderr + 2.0 * (gc - gf).abs());
        }
    }
    let agree = rep.rows.iter().zip(&tols).filter(|(r, t)| r.slack <= **t).count();
    let fraction = agree as f64 / rep.rows.len().max(1) as f64;
    rep.fitted.insert("agreement_fraction".into(), fraction);
    set_worst(&mut rep, &tols);
    rep.verdict = if fraction >= AGREEMENT_FRACTION { Verdict::Pass } else { Verdict::Fail };
    Ok(rep)
}
