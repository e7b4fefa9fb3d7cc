//! Spatial mollification of whole-space coefficients.
//!
//! The kernel is the radial bump `ρ_ε(y) = Z⁻¹ exp(-1 / (1 - |y/ε|²))` on the
//! open ball of radius ε, integrated with a tensor Gauss–Legendre rule on the
//! cube `[-ε, ε]^d`. The normalisation `Z` is computed with the same rule, so
//! constants are reproduced exactly and odd moments vanish by node symmetry.

use std::sync::Arc;

use super::spec::{Coefficients, Probe, ScalarFn, WholeSpaceSpec, MAX_DIM};
use super::OperatorError;

#[derive(Debug, Clone)]
pub struct MollifyConfig {
    /// Gauss–Legendre points per axis.
    pub order: usize,
    /// Relative tolerance between the rule at `order` and at `2·order`.
    pub tol: f64,
    /// Probes at which the convergence check runs; empty = defaults.
    pub probes: Vec<Probe>,
}

impl MollifyConfig {
    pub fn for_dim(dim: usize) -> Self {
        let order = match dim {
            1 => 32,
            2 => 16,
            _ => 8,
        };
        MollifyConfig {
            order,
            tol: 1e-6,
            probes: Vec::new(),
        }
    }
}

/// Unnormalised bump profile on the unit ball.
pub fn bump_profile(radius_sq: f64) -> f64 {
    if radius_sq >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - radius_sq)).exp()
    }
}

/// Quadrature offsets (scaled by ε) and normalised weights of the bump.
#[derive(Debug, Clone)]
pub struct BumpRule {
    pub dim: usize,
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BumpRule {
    pub fn new(dim: usize, epsilon: f64, order: usize) -> Self {
        let (nodes, w1) = crate::quadrature::gauss_legendre(order);
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let total = order.pow(dim as u32);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let r2: f64 = idx.iter().map(|&i| nodes[i] * nodes[i]).sum();
            let w = bump_profile(r2) * idx.iter().map(|&i| w1[i]).product::<f64>();
            if w > 0.0 {
                offsets.extend(idx.iter().map(|&i| nodes[i] * epsilon));
                weights.push(w);
            }
            for k in 0..dim {
                idx[k] += 1;
                if idx[k] < order {
                    break;
                }
                idx[k] = 0;
            }
        }
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        BumpRule { dim, offsets, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Second moment `∫ y_1² ρ(y) dy` of the discrete kernel along one axis.
    pub fn axis_second_moment(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * self.offsets[k * self.dim].powi(2))
            .sum()
    }

    #[inline]
    fn for_each_shift(&self, x: &[f64], mut f: impl FnMut(f64, &[f64])) {
        let d = self.dim;
        let mut y = [0.0; MAX_DIM];
        for (k, &w) in self.weights.iter().enumerate() {
            for i in 0..d {
                y[i] = x[i] - self.offsets[k * d + i];
            }
            f(w, &y[..d]);
        }
    }
}

fn mollify_scalar(rule: &Arc<BumpRule>, f: &ScalarFn) -> ScalarFn {
    let rule = rule.clone();
    let f = f.clone();
    Arc::new(move |t, x: &[f64]| {
        let mut acc = 0.0;
        rule.for_each_shift(x, |w, y| acc += w * f(t, y));
        acc
    })
}

fn mollify_coefficients(base: &Coefficients, rule: Arc<BumpRule>) -> Coefficients {
    let d = base.dim;
    let diff = base.diffusion.clone();
    let r1 = rule.clone();
    let diffusion = Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        let mut tmp = [0.0; MAX_DIM * MAX_DIM];
        out.iter_mut().for_each(|v| *v = 0.0);
        r1.for_each_shift(x, |w, y| {
            diff(t, y, &mut tmp[..d * d]);
            for (o, v) in out.iter_mut().zip(&tmp[..d * d]) {
                *o += w * v;
            }
        });
    });
    let drift_fn = base.drift.clone();
    let r2 = rule.clone();
    let drift = Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        let mut tmp = [0.0; MAX_DIM];
        out.iter_mut().for_each(|v| *v = 0.0);
        r2.for_each_shift(x, |w, y| {
            drift_fn(t, y, &mut tmp[..d]);
            for (o, v) in out.iter_mut().zip(&tmp[..d]) {
                *o += w * v;
            }
        });
    });
    Coefficients {
        dim: d,
        diffusion,
        drift,
        potential: mollify_scalar(&rule, &base.potential),
        eta: mollify_scalar(&rule, &base.eta),
        r: mollify_scalar(&rule, &base.r),
        beta: base.beta.as_ref().map(|b| mollify_scalar(&rule, b)),
    }
}

pub fn mollify(ws: &WholeSpaceSpec, epsilon: f64) -> Result<WholeSpaceSpec, OperatorError> {
    mollify_with(ws, epsilon, &MollifyConfig::for_dim(ws.coeffs.dim))
}

pub fn mollify_with(ws: &WholeSpaceSpec, epsilon: f64, cfg: &MollifyConfig) -> Result<WholeSpaceSpec, OperatorError> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(OperatorError::InvalidEpsilon(epsilon));
    }
    let d = ws.coeffs.dim;
    let coarse = mollify_coefficients(&ws.coeffs, Arc::new(BumpRule::new(d, epsilon, cfg.order)));
    let fine = mollify_coefficients(&ws.coeffs, Arc::new(BumpRule::new(d, epsilon, 2 * cfg.order)));

    let probes = if cfg.probes.is_empty() {
        default_probes(d, ws.constants.time_interval.0)
    } else {
        cfg.probes.clone()
    };
    let mut worst: Option<(f64, Probe)> = None;
    for p in &probes {
        let mut values = coarse.q(p.t, &p.x);
        values.extend(coarse.b(p.t, &p.x));
        values.push(coarse.c(p.t, &p.x));
        let mut reference = fine.q(p.t, &p.x);
        reference.extend(fine.b(p.t, &p.x));
        reference.push(fine.c(p.t, &p.x));
        for (a, b) in values.iter().zip(&reference) {
            let rel = (a - b).abs() / (1.0 + b.abs());
            if worst.as_ref().is_none_or(|w| rel > w.0) {
                worst = Some((rel, p.clone()));
            }
        }
    }
    if let Some((rel, probe)) = worst {
        if rel > cfg.tol || rel.is_nan() {
            return Err(OperatorError::QuadratureNonconvergence { probe, difference: rel });
        }
    }
    Ok(WholeSpaceSpec {
        name: format!("{}~eps{}", ws.source, epsilon),
        coeffs: coarse,
        constants: ws.constants.clone(),
        structure: ws.structure,
        epsilon,
        source: ws.source.clone(),
    })
}

fn default_probes(dim: usize, t: f64) -> Vec<Probe> {
    let mut out = Vec::new();
    for &v in &[-1.3, -0.2, 0.0, 0.35, 2.1] {
        let mut x = vec![0.5; dim];
        x[dim - 1] = v;
        out.push(Probe::new(t, x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::catalog;
    use crate::operator::extend::extend_coefficients;
    use crate::quadrature::integrate;

    fn quadratic_potential_ws() -> WholeSpaceSpec {
        let (spec, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let mut ws = extend_coefficients(&spec).unwrap();
        ws.coeffs.potential = Arc::new(|_t, x: &[f64]| x[0] * x[0]);
        ws
    }

    #[test]
    fn constant_coefficients_are_fixed_points() {
        let (spec, _) = catalog::heat(2, 0.3);
        let ws = extend_coefficients(&spec).unwrap();
        let m = mollify(&ws, 0.4).unwrap();
        let q = m.coeffs.q(0.0, &[0.3, -0.2]);
        assert!((q[0] - 1.0).abs() < 1e-14 && q[1].abs() < 1e-14 && (q[3] - 1.0).abs() < 1e-14);
        assert!((m.coeffs.c(0.0, &[0.3, -0.2]) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn linear_drift_is_preserved() {
        let (spec, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let ws = extend_coefficients(&spec).unwrap();
        for &eps in &[0.05, 0.5, 1.0] {
            let m = mollify(&ws, eps).unwrap();
            for &x in &[-2.0, 0.0, 0.3, 5.0] {
                assert!((m.coeffs.b(0.0, &[x])[0] + x).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_potential_gains_second_moment() {
        // independent second moment of the bump by adaptive quadrature
        let eps: f64 = 0.5;
        let (z, _) = integrate(|y| bump_profile((y / eps).powi(2)), -eps, eps, 1e-15, 1e-13);
        let (m2, _) = integrate(|y| y * y * bump_profile((y / eps).powi(2)), -eps, eps, 1e-15, 1e-13);
        let sigma2 = m2 / z;
        let m = mollify(&quadratic_potential_ws(), eps).unwrap();
        for &x in &[-1.0, 0.0, 0.25, 3.0] {
            let got = m.coeffs.c(0.0, &[x]);
            assert!((got - (x * x + sigma2)).abs() < 1e-8, "x={x} got={got} want={}", x * x + sigma2);
        }
    }

    #[test]
    fn invalid_epsilon_rejected() {
        let ws = quadratic_potential_ws();
        assert!(matches!(mollify(&ws, 0.0), Err(OperatorError::InvalidEpsilon(_))));
        assert!(matches!(mollify(&ws, 1.5), Err(OperatorError::InvalidEpsilon(_))));
    }

    #[test]
    fn nonconvergence_reported() {
        let mut ws = quadratic_potential_ws();
        ws.coeffs.potential = Arc::new(|_t, x: &[f64]| (200.0 * x[0]).sin());
        let cfg = MollifyConfig {
            order: 4,
            tol: 1e-9,
            probes: Vec::new(),
        };
        assert!(matches!(
            mollify_with(&ws, 1.0, &cfg),
            Err(OperatorError::QuadratureNonconvergence { .. })
        ));
    }
}
