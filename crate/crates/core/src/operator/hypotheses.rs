//! Probe-based verification of the structural hypotheses on the coefficients
//! and computation of the derived constants (C_p, K_p, σ₀, Λ, ...).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extend::BOUNDARY_TOL;
use super::spec::{OperatorSpec, Probe, MAX_DIM};
use super::OperatorError;

/// Safety margin applied to probe maxima when reporting empirical constants.
pub const EMPIRICAL_MARGIN: f64 = 0.05;

/// `M_p = min{1, p - 1}`.
pub fn m_p(p: f64) -> f64 {
    1.0f64.min(p - 1.0)
}

/// `ℓ_p = max{p/2 - 1, 1}`.
pub fn l_p(p: f64) -> f64 {
    (p / 2.0 - 1.0).max(1.0)
}

/// Probe maximum inflated by [`EMPIRICAL_MARGIN`].
pub fn with_margin(v: f64) -> f64 {
    v + EMPIRICAL_MARGIN * v.abs()
}

/// Finite-difference step `1e-4 (1 + |x|)`.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Partial derivative along `axis`; one-sided (second order) when a central
/// stencil would leave the half-space.
pub fn fd_partial(f: &dyn Fn(&[f64]) -> f64, x: &[f64], axis: usize, half_space: bool) -> f64 {
    let d = x.len();
    let h = fd_step(x);
    let mut y = [0.0; MAX_DIM];
    y[..d].copy_from_slice(x);
    let mut at = |offset: f64| {
        y[axis] = x[axis] + offset;
        f(&y[..d])
    };
    if half_space && axis == d - 1 && x[axis] - h < 0.0 {
        let (f0, f1, f2) = (at(0.0), at(h), at(2.0 * h));
        (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
    } else {
        (at(h) - at(-h)) / (2.0 * h)
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisOptions {
    pub p_list: Vec<f64>,
    /// User-supplied C_p values checked against the probe left-hand side.
    pub supplied_cp: Vec<(f64, f64)>,
    pub tol: f64,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            p_list: vec![2.0],
            supplied_cp: Vec::new(),
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub worst_slack: f64,
    pub worst_probe: Option<Probe>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentConstants {
    pub p: f64,
    pub m_p: f64,
    pub l_p: f64,
    /// Probe maximum of `r + (k₁²d²/(4M_p) - M_p)η - (1 - 1/p)c + p k₂ β/(4(p-1))`.
    pub cp_probe_max: f64,
    pub cp_empirical: f64,
    /// Probe maximum of `r + k₁²d²η/(4M_p)` (only meaningful when c ≡ 0).
    pub kp_probe_max: f64,
    pub kp_empirical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub exponents: Vec<ExponentConstants>,
    /// `σ₀ = ½ sup [r + (k₁²d²/4 - 1)η]` over probes.
    pub sigma0: f64,
    /// Largest `|D_i q_jk + D_j q_ik + D_k q_ij|` over probes.
    pub d0_condition_residual: f64,
    /// Largest eigenvalue of Q over probes.
    pub lambda: f64,
    pub c_min: f64,
    pub eta_min: f64,
}

impl DerivedConstants {
    pub fn for_p(&self, p: f64) -> Option<&ExponentConstants> {
        self.exponents.iter().find(|e| (e.p - p).abs() < 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub tolerance: f64,
    pub probe_count: usize,
    pub checks: Vec<HypothesisCheck>,
    pub derived: DerivedConstants,
}

impl HypothesisReport {
    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Whether every listed check exists and passes; missing checks count as failures.
    pub fn first_failure(&self, names: &[&str]) -> Option<String> {
        names
            .iter()
            .find(|n| !self.check(n).is_some_and(|c| c.pass))
            .map(|n| n.to_string())
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub mod names {
    pub const ELLIPTICITY: &str = "ellipticity";
    pub const BOUNDARY: &str = "boundary_compatibility";
    pub const POTENTIAL_LOWER: &str = "potential_lower_bound";
    pub const DISSIPATIVITY_R: &str = "dissipativity_r";
    pub const DISSIPATIVITY_GRAD_B: &str = "dissipativity_grad_b";
    pub const DIFFUSION_GRADIENT: &str = "diffusion_gradient";
    pub const POTENTIAL_GRADIENT: &str = "potential_gradient";
    pub const BETA_VS_POTENTIAL: &str = "beta_vs_potential";
    pub const BETA_VS_SQRT_R: &str = "beta_vs_sqrt_r";
    pub const SIGMA0_NEGATIVE: &str = "sigma0_negative";
    pub const X_INDEPENDENT: &str = "diffusion_x_independent";
    pub const POTENTIAL_ZERO: &str = "potential_zero";
    pub const D0_CONDITION: &str = "d0_condition";

    pub fn cp_bound(p: f64) -> String {
        format!("cp_bound_p{p}")
    }
}

/// Per-probe raw quantities, reduced afterwards in probe order.
struct ProbeValues {
    ellipticity: f64,
    eta: f64,
    boundary: Option<f64>,
    potential: f64,
    dissipativity_r: f64,
    grad_b: f64,
    diffusion_gradient: f64,
    potential_gradient: f64,
    beta_vs_c: f64,
    beta_vs_sqrt_r: f64,
    cp_lhs: Vec<f64>,
    kp_lhs: Vec<f64>,
    sigma_lhs: f64,
    d0_residual: f64,
    d0_condition: f64,
    lambda_max: f64,
    x_dependence: f64,
    asymmetry: f64,
}

fn sym_eigenvalues(m: &[f64], d: usize) -> (f64, f64) {
    let mat = DMatrix::from_row_slice(d, d, m);
    let sym = (&mat + mat.transpose()) * 0.5;
    let ev = SymmetricEigen::new(sym).eigenvalues;
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn evaluate_probe(spec: &OperatorSpec, p: &Probe, opts: &HypothesisOptions) -> ProbeValues {
    let co = &spec.coeffs;
    let k = &spec.constants;
    let d = co.dim;
    let (t, x) = (p.t, p.x.as_slice());
    let q = co.q(t, x);
    let b = co.b(t, x);
    let c = co.c(t, x);
    let eta = (co.eta)(t, x);
    let r = (co.r)(t, x);
    let beta = co.beta_at(t, x);
    let radius = p.norm();

    let asymmetry = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (q[i * d + j] - q[j * d + i]).abs())
        .fold(0.0, f64::max);
    let (lambda_min, lambda_max) = sym_eigenvalues(&q, d);

    let boundary = (x[d - 1] == 0.0).then(|| {
        let worst = (0..d - 1).map(|i| q[i * d + d - 1].abs()).fold(0.0, f64::max).max(b[d - 1].abs());
        worst - BOUNDARY_TOL * (1.0 + radius)
    });

    // Jacobian of b: jac[i*d + j] = ∂b_i/∂x_j
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        let bi = |y: &[f64]| {
            let mut out = [0.0; MAX_DIM];
            (co.drift)(t, y, &mut out[..d]);
            out[i]
        };
        for j in 0..d {
            jac[i * d + j] = fd_partial(&bi, x, j, true);
        }
    }
    let (_, grad_b_max) = sym_eigenvalues(&jac, d);

    // gradients of q_ij: dq[(i*d + j)*d + k] = ∂_k q_ij
    let mut dq = vec![0.0; d * d * d];
    for i in 0..d {
        for j in 0..d {
            let qij = |y: &[f64]| {
                let mut out = [0.0; MAX_DIM * MAX_DIM];
                (co.diffusion)(t, y, &mut out[..d * d]);
                out[i * d + j]
            };
            for kk in 0..d {
                dq[(i * d + j) * d + kk] = fd_partial(&qij, x, kk, true);
            }
        }
    }
    let diffusion_gradient = (0..d * d)
        .map(|ij| (0..d).map(|kk| dq[ij * d + kk].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);

    let mut d0_residual = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            for kk in 0..d {
                let v = dq[(j * d + kk) * d + i] + dq[(i * d + kk) * d + j] + dq[(i * d + j) * d + kk];
                d0_residual = d0_residual.max(v.abs());
            }
        }
    }
    let d0_condition = match k.d0 {
        Some(d0) => {
            let mut m = vec![0.0; d * d];
            for a in 0..d {
                for bb in 0..d {
                    m[a * d + bb] = 0.5 * (jac[a * d + bb] + jac[bb * d + a]);
                }
            }
            for ij in 0..d * d {
                for a in 0..d {
                    for bb in 0..d {
                        m[a * d + bb] += dq[ij * d + a] * dq[ij * d + bb] / (2.0 * k.eta0);
                    }
                }
            }
            sym_eigenvalues(&m, d).1 - d0
        }
        None => f64::NEG_INFINITY,
    };

    let pot = |y: &[f64]| (co.potential)(t, y);
    let grad_c = (0..d).map(|kk| fd_partial(&pot, x, kk, true).powi(2)).sum::<f64>().sqrt();

    let chi = if radius < k.r0 { 1.0 } else { 0.0 };
    let dd = d as f64;
    let cp_lhs = opts
        .p_list
        .iter()
        .map(|&pp| {
            if pp <= 1.0 {
                return f64::NAN;
            }
            let mp = m_p(pp);
            r + (k.k1 * k.k1 * dd * dd / (4.0 * mp) - mp) * eta - (1.0 - 1.0 / pp) * c
                + pp * k.k2 / (4.0 * (pp - 1.0)) * beta
        })
        .collect();
    let kp_lhs = opts
        .p_list
        .iter()
        .map(|&pp| {
            if pp <= 1.0 {
                return f64::NAN;
            }
            r + k.k1 * k.k1 * dd * dd / (4.0 * m_p(pp)) * eta
        })
        .collect();

    let x_dependence = if spec.structure.diffusion_x_independent {
        let q0 = co.q(t, &vec![0.0; d]);
        q.iter().zip(&q0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        0.0
    };

    ProbeValues {
        ellipticity: eta - lambda_min,
        eta,
        boundary,
        potential: if spec.structure.potential_zero { c.abs() } else { k.c0 - c },
        dissipativity_r: r + k.l0 * eta - k.l1 * chi,
        grad_b: grad_b_max - r,
        diffusion_gradient: diffusion_gradient - k.k1 * eta,
        potential_gradient: grad_c - beta,
        beta_vs_c: beta - k.k2 * c,
        beta_vs_sqrt_r: k.kappa.map_or(f64::NEG_INFINITY, |kappa| beta - kappa * r.abs().sqrt()),
        cp_lhs,
        kp_lhs,
        sigma_lhs: r + (k.k1 * k.k1 * dd * dd / 4.0 - 1.0) * eta,
        d0_residual,
        d0_condition,
        lambda_max,
        x_dependence,
        asymmetry,
    }
}

struct Acc {
    worst: f64,
    probe: Option<Probe>,
}

impl Acc {
    fn new() -> Self {
        Acc {
            worst: f64::NEG_INFINITY,
            probe: None,
        }
    }
    fn push(&mut self, v: f64, p: &Probe) {
        if v > self.worst || v.is_nan() && !self.worst.is_nan() {
            self.worst = v;
            self.probe = Some(p.clone());
        }
    }
    fn into_check(self, name: &str, tol: f64) -> HypothesisCheck {
        HypothesisCheck {
            name: name.to_string(),
            worst_slack: self.worst,
            pass: self.worst <= tol,
            worst_probe: self.probe,
        }
    }
}

/// Evaluates every applicable sub-hypothesis over `probes`.
///
/// Non-symmetric diffusion or an ellipticity minorant below the declared η₀
/// are hard errors; everything else is reported as a slack with a verdict.
pub fn check_hypotheses(
    spec: &OperatorSpec,
    probes: &[Probe],
    opts: &HypothesisOptions,
) -> Result<HypothesisReport, OperatorError> {
    if probes.is_empty() {
        return Err(OperatorError::NoProbes);
    }
    let values: Vec<ProbeValues> = probes.par_iter().map(|p| evaluate_probe(spec, p, opts)).collect();
    let k = &spec.constants;
    let tol = opts.tol;

    for (v, p) in values.iter().zip(probes) {
        let scale = 1.0 + v.lambda_max.abs();
        if v.asymmetry > 1e-12 * scale || v.asymmetry.is_nan() {
            return Err(OperatorError::NonSymmetric {
                probe: p.clone(),
                asymmetry: v.asymmetry,
            });
        }
        if v.eta < k.eta0 - tol {
            return Err(OperatorError::EtaBelowMinimum {
                probe: p.clone(),
                eta: v.eta,
                eta0: k.eta0,
            });
        }
    }

    let mut ellip = Acc::new();
    let mut boundary = Acc::new();
    let mut potential = Acc::new();
    let mut diss_r = Acc::new();
    let mut grad_b = Acc::new();
    let mut diff_grad = Acc::new();
    let mut pot_grad = Acc::new();
    let mut beta_c = Acc::new();
    let mut beta_r = Acc::new();
    let mut sigma = Acc::new();
    let mut xdep = Acc::new();
    let mut d0c = Acc::new();
    let np = opts.p_list.len();
    let mut cp: Vec<Acc> = (0..np).map(|_| Acc::new()).collect();
    let mut kp: Vec<Acc> = (0..np).map(|_| Acc::new()).collect();
    let mut d0_residual = 0.0f64;
    let mut lambda = f64::NEG_INFINITY;
    let mut c_min = f64::INFINITY;
    let mut eta_min = f64::INFINITY;

    for (v, p) in values.iter().zip(probes) {
        ellip.push(v.ellipticity, p);
        if let Some(bv) = v.boundary {
            boundary.push(bv, p);
        }
        potential.push(v.potential, p);
        diss_r.push(v.dissipativity_r, p);
        grad_b.push(v.grad_b, p);
        diff_grad.push(v.diffusion_gradient, p);
        pot_grad.push(v.potential_gradient, p);
        beta_c.push(v.beta_vs_c, p);
        beta_r.push(v.beta_vs_sqrt_r, p);
        sigma.push(v.sigma_lhs, p);
        xdep.push(v.x_dependence, p);
        d0c.push(v.d0_condition, p);
        for i in 0..np {
            cp[i].push(v.cp_lhs[i], p);
            kp[i].push(v.kp_lhs[i], p);
        }
        d0_residual = d0_residual.max(v.d0_residual);
        lambda = lambda.max(v.lambda_max);
        c_min = c_min.min(-(v.potential - if spec.structure.potential_zero { 0.0 } else { k.c0 }));
        eta_min = eta_min.min(v.eta);
    }
    if spec.structure.potential_zero {
        c_min = 0.0;
    }

    let sigma0 = sigma.worst / 2.0;
    let mut checks = vec![
        ellip.into_check(names::ELLIPTICITY, tol),
        potential.into_check(
            if spec.structure.potential_zero {
                names::POTENTIAL_ZERO
            } else {
                names::POTENTIAL_LOWER
            },
            tol,
        ),
        diss_r.into_check(names::DISSIPATIVITY_R, tol),
        grad_b.into_check(names::DISSIPATIVITY_GRAD_B, tol),
        diff_grad.into_check(names::DIFFUSION_GRADIENT, tol),
    ];
    if boundary.probe.is_some() {
        checks.push(boundary.into_check(names::BOUNDARY, 0.0));
    }
    if !spec.structure.potential_zero {
        checks.push(pot_grad.into_check(names::POTENTIAL_GRADIENT, tol));
        checks.push(beta_c.into_check(names::BETA_VS_POTENTIAL, tol));
    }
    if k.kappa.is_some() {
        checks.push(beta_r.into_check(names::BETA_VS_SQRT_R, tol));
    }
    if k.d0.is_some() {
        checks.push(d0c.into_check(names::D0_CONDITION, tol));
    }
    if spec.structure.diffusion_x_independent {
        checks.push(xdep.into_check(names::X_INDEPENDENT, tol));
    }
    checks.push(HypothesisCheck {
        name: names::SIGMA0_NEGATIVE.to_string(),
        worst_slack: sigma0,
        pass: sigma0 < 0.0,
        worst_probe: sigma.probe.clone(),
    });

    let mut exponents = Vec::with_capacity(np);
    let supplied: BTreeMap<u64, f64> = opts.supplied_cp.iter().map(|(p, v)| (p.to_bits(), *v)).collect();
    for (i, &p) in opts.p_list.iter().enumerate() {
        let cpm = cp[i].worst;
        let kpm = kp[i].worst;
        if let Some(&value) = supplied.get(&p.to_bits()) {
            checks.push(HypothesisCheck {
                name: names::cp_bound(p),
                worst_slack: cpm - value,
                pass: cpm - value <= tol,
                worst_probe: cp[i].probe.clone(),
            });
        }
        exponents.push(ExponentConstants {
            p,
            m_p: m_p(p),
            l_p: l_p(p),
            cp_probe_max: cpm,
            cp_empirical: with_margin(cpm),
            kp_probe_max: kpm,
            kp_empirical: with_margin(kpm),
        });
    }

    Ok(HypothesisReport {
        tolerance: tol,
        probe_count: probes.len(),
        checks,
        derived: DerivedConstants {
            exponents,
            sigma0,
            d0_condition_residual: d0_residual,
            lambda,
            c_min,
            eta_min,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::catalog;
    use crate::operator::spec::log_probe_grid;
    use proptest::prelude::*;

    fn ou_probes() -> Vec<Probe> {
        log_probe_grid(1, 20.0, 40, &[0.0, 1.0])
    }

    #[test]
    fn exponent_helpers() {
        assert_eq!(m_p(2.0), 1.0);
        assert_eq!(m_p(1.5), 0.5);
        assert_eq!(l_p(2.0), 1.0);
        assert_eq!(l_p(6.0), 2.0);
    }

    #[test]
    fn ou_passes_with_cp_minus_two() {
        let (spec, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let rep = check_hypotheses(&spec, &ou_probes(), &HypothesisOptions::default()).unwrap();
        for c in &rep.checks {
            assert!(c.pass, "{} failed with slack {}", c.name, c.worst_slack);
        }
        let e = rep.derived.for_p(2.0).unwrap();
        assert!((e.cp_probe_max + 2.0).abs() < 1e-12);
        assert!((e.cp_empirical + 1.9).abs() < 1e-12);
        assert!((rep.derived.sigma0 + 1.0).abs() < 1e-12);
        assert!((rep.derived.lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn section5_cp_matches_one_variable_sup() {
        // d=1, B=1, gamma=0, k=m=2, beta0=eta0=1: C_2 = sup_{y>=1}(-y^2) = -1
        let (spec, _) = catalog::catalog_example(
            catalog::Family::General,
            &catalog::Section5Params {
                dim: 1,
                k: 2.0,
                m: 2.0,
                q: 3.0,
                b_matrix: vec![vec![1.0]],
                b0: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let probes = log_probe_grid(1, 5.0, 60, &[0.0]);
        let rep = check_hypotheses(&spec, &probes, &HypothesisOptions::default()).unwrap();
        let e = rep.derived.for_p(2.0).unwrap();
        assert!((e.cp_probe_max + 1.0).abs() < 1e-9, "{}", e.cp_probe_max);
        for c in &rep.checks {
            if c.name != names::SIGMA0_NEGATIVE {
                assert!(c.pass, "{} failed with slack {}", c.name, c.worst_slack);
            }
        }
    }

    #[test]
    fn dissipativity_failure_reported() {
        // heat: r = 0 while -L0 eta = -1 outside the unit ball
        let (spec, _) = catalog::heat(1, 0.0);
        let probes = vec![Probe::new(0.0, vec![3.0])];
        let rep = check_hypotheses(&spec, &probes, &HypothesisOptions::default()).unwrap();
        let c = rep.check(names::DISSIPATIVITY_R).unwrap();
        assert!(!c.pass);
        assert!(c.worst_slack > 0.0);
    }

    #[test]
    fn supplied_cp_checked() {
        let (spec, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let opts = HypothesisOptions {
            supplied_cp: vec![(2.0, -2.5)],
            ..Default::default()
        };
        let rep = check_hypotheses(&spec, &ou_probes(), &opts).unwrap();
        assert!(!rep.check(&names::cp_bound(2.0)).unwrap().pass);
    }

    #[test]
    fn errors_for_asymmetry_and_low_eta() {
        use std::sync::Arc;
        let (mut spec, _) = catalog::heat(2, 0.0);
        spec.coeffs.diffusion = Arc::new(|_t, _x: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[1.0, 0.5, 0.0, 1.0]);
        });
        let probes = log_probe_grid(2, 2.0, 3, &[0.0]);
        assert!(matches!(
            check_hypotheses(&spec, &probes, &HypothesisOptions::default()),
            Err(OperatorError::NonSymmetric { .. })
        ));
        let (mut spec, _) = catalog::heat(1, 0.0);
        spec.constants.eta0 = 2.0;
        assert!(matches!(
            check_hypotheses(&spec, &ou_probes(), &HypothesisOptions::default()),
            Err(OperatorError::EtaBelowMinimum { .. })
        ));
        assert!(matches!(
            check_hypotheses(&spec, &[], &HypothesisOptions::default()),
            Err(OperatorError::NoProbes)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adding_probes_never_turns_fail_into_pass(extra in proptest::collection::vec(0.0f64..20.0, 1..8)) {
            let (spec, _) = catalog::heat(1, 0.0);
            let base = vec![Probe::new(0.0, vec![0.5]), Probe::new(0.0, vec![4.0])];
            let rep = check_hypotheses(&spec, &base, &HypothesisOptions::default()).unwrap();
            let mut more = base.clone();
            more.extend(extra.iter().map(|&x| Probe::new(0.0, vec![x])));
            let rep2 = check_hypotheses(&spec, &more, &HypothesisOptions::default()).unwrap();
            for c in &rep.checks {
                let c2 = rep2.check(&c.name).unwrap();
                prop_assert!(c2.worst_slack >= c.worst_slack);
                if !c.pass { prop_assert!(!c2.pass); }
            }
        }
    }
}
