use super::{field_value, fit_slope, grid_solve, lp_norm, time_list, AuditContext, Datum, EstimateError, EstimateReport, ProbeRow};
use crate::grid::Bc;
use crate::operator::hypotheses::names;

/// Deviations within this many standard errors of `m_s(f)` are treated as
/// Monte Carlo noise and left out of the slope fit.
pub const NOISE_FLOOR_SIGMAS: f64 = 10.0;

/// `m_s(f)` and its stderr for Neumann audits; zero for Dirichlet.
fn centre(ctx: &AuditContext, bc: Bc, f: &(dyn Fn(&[f64]) -> f64 + Sync), s: f64) -> Result<(f64, f64), EstimateError> {
    match bc {
        Bc::Neumann => Ok(ctx.measure(s)?.expect_with_stderr(f)),
        Bc::Dirichlet => Ok((0.0, 0.0)),
        Bc::WholeSpace => Err(EstimateError::Invalid("decay audits need a half-space boundary condition".into())),
    }
}

fn worst_slope_slack(rep: &mut EstimateReport) {
    rep.worst_slack = rep
        .slopes
        .iter()
        .filter(|f| f.slope.is_finite())
        .map(|f| f.slope - f.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    rep.tolerance = 0.0;
    rep.decide();
}

/// Audits the local-uniform decay `sup_{B_K⁺} |G_N f − m_s(f)|` (Neumann) or
/// `sup_{B_K⁺} |G_D f|` (Dirichlet) against the rate σ₀.
pub fn audit_asymptotics(
    ctx: &AuditContext,
    bc: Bc,
    data: &[Datum],
    s: f64,
    t_list: &[f64],
    radius: f64,
) -> Result<EstimateReport, EstimateError> {
    let audit = "asymptotics";
    let mut checks = ctx.standing();
    checks.push(names::SIGMA0_NEGATIVE.into());
    ctx.require_all(audit, &checks)?;
    let ts = time_list(s, t_list)?;
    let sigma0 = ctx.sigma0();
    let mut rep = EstimateReport::new(audit, s);
    rep.constants.insert("sigma0".into(), sigma0);
    rep.constants.insert("K".into(), radius);

    for (name, f) in data {
        let (m, m_se) = centre(ctx, bc, *f, s)?;
        let u = grid_solve(ctx.spec, bc, *f, s, &ts, ctx.grid)?;
        let grid = &u.grid;
        let mut buf = vec![0.0; grid.dim()];
        let mut sup_f = 0.0f64;
        for node in 0..grid.len() {
            grid.node_coords(node, &mut buf);
            sup_f = sup_f.max(f(&buf).abs());
        }
        let floor = (NOISE_FLOOR_SIGMAS * m_se).max(1e-10 * sup_f);
        let mut fit_t = Vec::new();
        let mut fit_y = Vec::new();
        let mut prefactor = 0.0f64;
        for &t in &ts {
            let vals = u.at(t)?;
            let mut best = (0.0f64, vec![0.0; grid.dim()]);
            for (node, v) in vals.iter().enumerate() {
                grid.node_coords(node, &mut buf);
                if buf.iter().map(|a| a * a).sum::<f64>() <= radius * radius && (v - m).abs() > best.0 {
                    best = ((v - m).abs(), buf.clone());
                }
            }
            let dev = best.0;
            if dev > floor {
                fit_t.push(t);
                fit_y.push(dev);
                if sup_f > 0.0 {
                    prefactor = prefactor.max(dev * (-sigma0 * (t - s)).exp() / sup_f);
                }
            }
            rep.rows.push(ProbeRow {
                function: name.to_string(),
                bc: Some(bc),
                t,
                x: best.1,
                lhs: dev,
                rhs: f64::NAN,
                slack: f64::NAN,
            });
        }
        let excluded = ts.len() - fit_t.len();
        if excluded > 0 {
            rep.notes.push(format!("{name}: {excluded} time(s) below the noise floor {floor:.3e} left out of the fit"));
        }
        for r in rep.rows.iter_mut().filter(|r| r.function == *name) {
            r.rhs = prefactor * (sigma0 * (r.t - s)).exp() * sup_f;
            r.slack = r.lhs - r.rhs;
        }
        rep.fitted.insert(format!("c_K:{name}"), prefactor);
        rep.fitted.insert(format!("centre:{name}"), m);
        rep.slopes.push(fit_slope(name, &fit_t, &fit_y, sigma0));
    }
    worst_slope_slack(&mut rep);
    Ok(rep)
}

/// Audits `‖G_N f − m_s f‖_{L^p(μ_t)}` (Neumann) or `‖G_D f‖_{L^p(μ_t)}`
/// (Dirichlet) against the rate `−L₀η₀`. Needs measures at `s` and every `t`.
pub fn audit_lp_decay(
    ctx: &AuditContext,
    bc: Bc,
    p: f64,
    data: &[Datum],
    s: f64,
    t_list: &[f64],
) -> Result<EstimateReport, EstimateError> {
    let audit = "lp_decay";
    ctx.require_all(audit, &ctx.standing())?;
    if p < 1.0 {
        return Err(EstimateError::Invalid("L^p decay needs p >= 1".into()));
    }
    let ts = time_list(s, t_list)?;
    let measures: Vec<_> = ts.iter().map(|&t| ctx.measure(t)).collect::<Result<_, _>>()?;
    let rate = ctx.l0_eta0();
    let mut rep = EstimateReport::new(audit, s);
    rep.p = Some(p);
    rep.constants.insert("L0_eta0".into(), rate);

    for (name, f) in data {
        let (m, m_se) = centre(ctx, bc, *f, s)?;
        let mu_s = ctx.measure(s)?;
        let fs: Vec<f64> = (0..mu_s.len()).map(|i| f(mu_s.point(i))).collect();
        let (norm_s, _) = lp_norm(mu_s, &fs, p);
        let u = grid_solve(ctx.spec, bc, *f, s, &ts, ctx.grid)?;
        let mut fit_t = Vec::new();
        let mut fit_y = Vec::new();
        let mut k = 0.0f64;
        let first = rep.rows.len();
        for (&t, mu) in ts.iter().zip(&measures) {
            let vals: Vec<f64> = (0..mu.len())
                .map(|i| field_value(&u, t, mu.point(i)).map(|v| v - m))
                .collect::<Result<_, _>>()?;
            let (norm, se) = lp_norm(mu, &vals, p);
            if norm > NOISE_FLOOR_SIGMAS * m_se && norm > 3.0 * se {
                fit_t.push(t);
                fit_y.push(norm);
                if norm_s > 0.0 {
                    k = k.max(norm * (rate * (t - s)).exp() / norm_s);
                }
            }
            rep.rows.push(ProbeRow {
                function: name.to_string(),
                bc: Some(bc),
                t,
                x: Vec::new(),
                lhs: norm,
                rhs: f64::NAN,
                slack: f64::NAN,
            });
        }
        for r in &mut rep.rows[first..] {
            r.rhs = k * (-rate * (r.t - s)).exp() * norm_s;
            r.slack = r.lhs - r.rhs;
        }
        let excluded = ts.len() - fit_t.len();
        if excluded > 0 {
            rep.notes.push(format!("{name}: {excluded} time(s) at the Monte Carlo noise floor left out of the fit"));
        }
        rep.fitted.insert(format!("k:{name}"), k);
        rep.slopes.push(fit_slope(name, &fit_t, &fit_y, -rate));
    }
    worst_slope_slack(&mut rep);
    Ok(rep)
}
