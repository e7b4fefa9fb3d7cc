//! Lyapunov ratio `A(t)φ / φ` for `φ(x) = 1 + |x|²` and the truncation radius.

use serde::{Deserialize, Serialize};

use super::spec::{Operator, Probe, MAX_DIM};
use super::OperatorError;

/// `(A(t)φ)(x) / φ(x)` with `Aφ = 2 Tr Q + 2<b, x> - c φ`.
pub fn lyapunov_ratio(op: &dyn Operator, t: f64, x: &[f64]) -> f64 {
    let co = op.coefficients();
    let d = co.dim;
    let mut q = [0.0; MAX_DIM * MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    (co.diffusion)(t, x, &mut q[..d * d]);
    (co.drift)(t, x, &mut b[..d]);
    let phi = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    let trace: f64 = (0..d).map(|i| q[i * d + i]).sum();
    let bx: f64 = b[..d].iter().zip(x).map(|(b, x)| b * x).sum();
    (2.0 * trace + 2.0 * bx) / phi - (co.potential)(t, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovShell {
    pub r_lo: f64,
    pub r_hi: f64,
    pub probes: usize,
    /// `None` for an empty shell.
    pub max_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTable {
    pub threshold: f64,
    pub shells: Vec<LyapunovShell>,
    /// Radius beyond which every probe satisfies `ratio ≤ -threshold`.
    pub r_star: f64,
}

/// Tabulates the ratio per shell `[radii[i], radii[i+1])` and locates `R*`.
///
/// `R*` is refined by bisection along the ray of the outermost failing probe.
pub fn lyapunov_rate(op: &dyn Operator, probes: &[Probe], radii: &[f64], threshold: f64) -> Result<LyapunovTable, OperatorError> {
    if probes.is_empty() {
        return Err(OperatorError::NoProbes);
    }
    let ratios: Vec<f64> = probes.iter().map(|p| lyapunov_ratio(op, p.t, &p.x)).collect();

    let mut shells = Vec::new();
    for w in radii.windows(2) {
        let mut shell = LyapunovShell {
            r_lo: w[0],
            r_hi: w[1],
            probes: 0,
            max_ratio: None,
        };
        for (p, &v) in probes.iter().zip(&ratios) {
            let r = p.norm();
            if r >= w[0] && r < w[1] {
                shell.probes += 1;
                shell.max_ratio = Some(shell.max_ratio.map_or(v, |m: f64| m.max(v)));
            }
        }
        shells.push(shell);
    }

    let fails = |v: f64| !(v <= -threshold);
    let outer = probes
        .iter()
        .zip(&ratios)
        .max_by(|a, b| a.0.norm().total_cmp(&b.0.norm()))
        .unwrap();
    if fails(*outer.1) {
        return Err(OperatorError::TruncationUnjustified {
            threshold,
            max_radius: outer.0.norm(),
        });
    }
    let worst = probes
        .iter()
        .zip(&ratios)
        .filter(|(_, &v)| fails(v))
        .max_by(|a, b| a.0.norm().total_cmp(&b.0.norm()));
    let r_star = match worst {
        None => 0.0,
        Some((p, _)) => {
            let r_fail = p.norm();
            let r_pass = probes
                .iter()
                .zip(&ratios)
                .filter(|(q, &v)| !fails(v) && q.norm() > r_fail)
                .map(|(q, _)| q.norm())
                .fold(f64::INFINITY, f64::min);
            let dir: Vec<f64> = p.x.iter().map(|v| v / r_fail).collect();
            let at = |r: f64| {
                let x: Vec<f64> = dir.iter().map(|u| u * r).collect();
                lyapunov_ratio(op, p.t, &x)
            };
            if r_fail == 0.0 || !r_pass.is_finite() || fails(at(r_pass)) {
                r_pass
            } else {
                let (mut lo, mut hi) = (r_fail, r_pass);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if fails(at(mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    };
    Ok(LyapunovTable {
        threshold,
        shells,
        r_star,
    })
}
