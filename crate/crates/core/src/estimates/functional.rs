use super::{datum_gradient_norm, field_value, grid_solve, lp_norm, set_worst, time_list, AuditContext, Datum, EstimateError, EstimateReport, ProbeRow};
use crate::grid::Bc;
use crate::measures::weighted_block_stats;
use crate::operator::spec::Operator;

/// Samples per axis when checking that a datum vanishes on the box faces.
const FACE_SAMPLES: usize = 33;

/// Largest `p` for which `‖G f‖_{L^p(μ_t)} ≤ ‖f‖_{L^q(μ_s)}` is asserted:
/// `e^{2L₀η₀² (t−s)/Λ}(q − 1) + 1`.
pub fn admissible_exponent(q: f64, tau: f64, l0: f64, eta0: f64, lambda: f64) -> f64 {
    (2.0 * l0 * eta0 * eta0 * tau / lambda).exp() * (q - 1.0) + 1.0
}

/// Checks that `f` vanishes on the wall and on the outer faces of `[-R, R]^{d-1} × [0, R]`.
fn compactly_supported(f: &(dyn Fn(&[f64]) -> f64 + Sync), dim: usize, radius: f64) -> bool {
    let axis: Vec<f64> = (0..FACE_SAMPLES)
        .map(|k| -radius + 2.0 * radius * k as f64 / (FACE_SAMPLES - 1) as f64)
        .collect();
    let normal: Vec<f64> = axis.iter().map(|v| (v + radius) / 2.0).collect();
    let mut x = vec![0.0; dim];
    let total = FACE_SAMPLES.pow(dim as u32 - 1);
    for face_axis in 0..dim {
        let faces: &[f64] = if face_axis + 1 == dim { &[0.0, radius] } else { &[-radius, radius] };
        for &face in faces {
            for k in 0..total {
                let mut rest = k;
                for (a, xa) in x.iter_mut().enumerate() {
                    if a == face_axis {
                        *xa = face;
                        continue;
                    }
                    let idx = rest % FACE_SAMPLES;
                    rest /= FACE_SAMPLES;
                    *xa = if a + 1 == dim { normal[idx] } else { axis[idx] };
                }
                if f(&x).abs() > 1e-12 {
                    return false;
                }
            }
        }
    }
    true
}

/// Audits the log-Sobolev inequality
/// `⟨μ_t, |f|^p log|f|⟩ ≤ (1/p)⟨|f|^p⟩ log⟨|f|^p⟩ + (pΛ/(2L₀η₀))⟨|f|^{p−2}|∇f|² χ_{f≠0}⟩`
/// for compactly supported data. Passes when `lhs − rhs ≤ 3·stderr` for every datum;
/// the stderr comes from the delta method on block means.
pub fn audit_log_sobolev(ctx: &AuditContext, p: f64, data: &[Datum], t: f64) -> Result<EstimateReport, EstimateError> {
    let audit = "log_sobolev";
    ctx.require_all(audit, &ctx.standing())?;
    if p <= 1.0 {
        return Err(EstimateError::Invalid("log-Sobolev needs p > 1".into()));
    }
    for (name, f) in data {
        if !compactly_supported(*f, ctx.spec.dim(), ctx.grid.radius) {
            return Err(EstimateError::NotCompactlySupported(name.to_string()));
        }
    }
    let mu = ctx.measure(t)?;
    let lambda = ctx.lambda();
    let rate = ctx.l0_eta0();
    let k = p * lambda / (2.0 * rate);
    let mut rep = EstimateReport::new(audit, t);
    rep.p = Some(p);
    rep.constants.insert("Lambda".into(), lambda);
    rep.constants.insert("L0_eta0".into(), rate);
    rep.constants.insert("k".into(), k);

    let mut tols = Vec::new();
    for (name, f) in data {
        let n = mu.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for i in 0..n {
            let x = mu.point(i);
            let v = f(x).abs();
            if v > 0.0 {
                let vp = v.powf(p);
                a.push(vp);
                b.push(vp * v.ln());
                c.push(v.powf(p - 2.0) * datum_gradient_norm(*f, x).powi(2));
            } else {
                a.push(0.0);
                b.push(0.0);
                c.push(0.0);
            }
        }
        let (ma, _) = mu.expect_values(&a);
        let (mb, _) = mu.expect_values(&b);
        let (mc, _) = mu.expect_values(&c);
        let entropy = if ma > 0.0 { ma * ma.ln() / p } else { 0.0 };
        let lhs = mb;
        let rhs = entropy + k * mc;
        let da = if ma > 0.0 { -(ma.ln() + 1.0) / p } else { 0.0 };
        let z: Vec<f64> = (0..n).map(|i| b[i] + da * a[i] - k * c[i]).collect();
        let (_, se) = weighted_block_stats(&z, &mu.weights, mu.block);
        let scale = lhs.abs().max(rhs.abs());
        if scale > 0.0 {
            rep.fitted.insert(format!("normalized_slack:{name}"), (lhs - rhs) / scale);
        }
        rep.fitted.insert(format!("stderr:{name}"), se);
        rep.rows.push(ProbeRow {
            function: name.to_string(),
            bc: None,
            t,
            x: Vec::new(),
            lhs,
            rhs,
            slack: lhs - rhs,
        });
        tols.push(3.0 * se);
    }
    set_worst(&mut rep, &tols);
    rep.decide();
    Ok(rep)
}

/// Audits `‖G_J f‖_{L^p(μ_t)} ≤ ‖f‖_{L^q(μ_s)}` at each time. With `p = None`
/// the largest admissible exponent is used; a supplied `p` above it is refused.
/// The tolerance per time is twice the coarse/refined grid discrepancy plus
/// three combined standard errors.
#[allow(clippy::too_many_arguments)]
pub fn audit_hypercontractivity(
    ctx: &AuditContext,
    bc: Bc,
    q: f64,
    p: Option<f64>,
    data: &[Datum],
    s: f64,
    t_list: &[f64],
) -> Result<EstimateReport, EstimateError> {
    let audit = "hypercontractivity";
    ctx.require_all(audit, &ctx.standing())?;
    if q <= 1.0 {
        return Err(EstimateError::Invalid("hypercontractivity needs q > 1".into()));
    }
    if !matches!(bc, Bc::Dirichlet | Bc::Neumann) {
        return Err(EstimateError::Invalid("hypercontractivity needs a half-space boundary condition".into()));
    }
    let ts = time_list(s, t_list)?;
    let lambda = ctx.lambda();
    let (l0, eta0) = (ctx.spec.constants.l0, ctx.spec.constants.eta0);
    let exponents: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let bound = admissible_exponent(q, t - s, l0, eta0, lambda);
            match p {
                Some(v) if v > bound * (1.0 + 1e-12) => Err(EstimateError::Inadmissible { p: v, q, bound }),
                Some(v) => Ok(v),
                None => Ok(bound),
            }
        })
        .collect::<Result<_, _>>()?;
    let mu_s = ctx.measure(s)?;
    let measures: Vec<_> = ts.iter().map(|&t| ctx.measure(t)).collect::<Result<_, _>>()?;
    let mut rep = EstimateReport::new(audit, s);
    rep.p = p;
    rep.constants.insert("q".into(), q);
    rep.constants.insert("Lambda".into(), lambda);
    rep.constants.insert("L0_eta0".into(), l0 * eta0);
    for &t in &ts {
        rep.fitted.insert(format!("admissible:{t}"), admissible_exponent(q, t - s, l0, eta0, lambda));
    }

    let fine_cfg = ctx.grid.refined();
    let mut tols = Vec::new();
    for (name, f) in data {
        let fs: Vec<f64> = (0..mu_s.len()).map(|i| f(mu_s.point(i))).collect();
        let (rhs, se_rhs) = lp_norm(mu_s, &fs, q);
        let coarse = grid_solve(ctx.spec, bc, *f, s, &ts, ctx.grid)?;
        let fine = grid_solve(ctx.spec, bc, *f, s, &ts, &fine_cfg)?;
        for ((&t, mu), &pe) in ts.iter().zip(&measures).zip(&exponents) {
            let at = |field| -> Result<Vec<f64>, EstimateError> {
                (0..mu.len()).map(|i| field_value(field, t, mu.point(i))).collect()
            };
            let (lhs, se_lhs) = lp_norm(mu, &at(&fine)?, pe);
            let (lhs_c, _) = lp_norm(mu, &at(&coarse)?, pe);
            rep.fitted.insert(format!("p:{name}:{t}"), pe);
            rep.rows.push(ProbeRow {
                function: name.to_string(),
                bc: Some(bc),
                t,
                x: Vec::new(),
                lhs,
                rhs,
                slack: lhs - rhs,
            });
            tols.push(2.0 * (lhs - lhs_c).abs() + 3.0 * (se_lhs * se_lhs + se_rhs * se_rhs).sqrt());
        }
    }
    set_worst(&mut rep, &tols);
    rep.decide();
    Ok(rep)
}
