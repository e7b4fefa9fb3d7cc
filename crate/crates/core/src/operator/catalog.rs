//! Closed-form example operators.
//!
//! The polynomial families are
//!
//! ```text
//! A(t) = (1+|x|²)^k Tr(B D²) - b₀(t)(1+|x|²)^m <x, ∇> + g₀ x_d D_d - γ (1+|x|²)^q
//! ```
//!
//! with a constant symmetric matrix `B`, `b₀(t) = b₀ (1 + a sin ωt)` and a
//! constant `γ ≥ 0`. The `XIndependent` family fixes `k = 0`.
//! The Ornstein–Uhlenbeck operator is the `XIndependent` member with `m = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::hypotheses::m_p;
use super::spec::{Coefficients, Constants, OperatorSpec, Structure};
use super::OperatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    General,
    XIndependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Section5Params {
    pub dim: usize,
    pub k: f64,
    pub m: f64,
    pub q: f64,
    /// Symmetric diffusion matrix `B`; identity when empty.
    pub b_matrix: Vec<Vec<f64>>,
    pub b0: f64,
    /// Relative amplitude `a` of the time oscillation of `b₀`.
    pub b0_amplitude: f64,
    pub b0_frequency: f64,
    /// Normal drift `g(x_d) = g₀ x_d`.
    pub g0: f64,
    pub gamma: f64,
    /// Ellipticity constant; defaults to the smallest eigenvalue of `B`.
    pub eta0: Option<f64>,
    pub time_interval: (f64, f64),
}

impl Default for Section5Params {
    fn default() -> Self {
        Section5Params {
            dim: 1,
            k: 2.0,
            m: 2.0,
            q: 3.0,
            b_matrix: Vec::new(),
            b0: 1.0,
            b0_amplitude: 0.0,
            b0_frequency: 0.0,
            g0: 0.0,
            gamma: 0.0,
            eta0: None,
            time_interval: (0.0, f64::INFINITY),
        }
    }
}

/// `Σ cᵢ y^{eᵢ}` on `y ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSum {
    terms: Vec<(f64, f64)>,
}

impl PowerSum {
    /// Builds the sum, merging equal exponents and dropping zero coefficients.
    pub fn new(terms: &[(f64, f64)]) -> Self {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for &(c, e) in terms {
            match merged.iter_mut().find(|(_, e2)| (*e2 - e).abs() < 1e-12) {
                Some(slot) => slot.0 += c,
                None => merged.push((c, e)),
            }
        }
        merged.retain(|(c, _)| c.abs() > 1e-14);
        merged.sort_by(|a, b| a.1.total_cmp(&b.1));
        PowerSum { terms: merged }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.terms.iter().map(|(c, e)| c * y.powf(*e)).sum()
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.terms.iter().map(|(c, e)| c * e * y.powf(e - 1.0)).sum()
    }

    /// `sup_{y ≥ 1}`; `None` if unbounded above.
    pub fn sup(&self) -> Option<f64> {
        let varying: Vec<(f64, f64)> = self.terms.iter().copied().filter(|(_, e)| *e > 0.0).collect();
        let Some(&(lead_c, lead_e)) = varying.last() else {
            return Some(self.eval(1.0));
        };
        if lead_c > 0.0 {
            return None;
        }
        // beyond y_max the leading term dominates the derivative
        let others: f64 = varying[..varying.len() - 1].iter().map(|(c, e)| (c * e).abs()).sum();
        let gap = varying[..varying.len() - 1]
            .iter()
            .map(|(_, e)| lead_e - e)
            .fold(lead_e, f64::min);
        let y_max = 2.0 * (others / (lead_c.abs() * lead_e)).powf(1.0 / gap).max(1.0);

        let n = 4000;
        let (a, b) = (0.0f64, y_max.ln());
        let ys: Vec<f64> = (0..=n).map(|i| (a + (b - a) * i as f64 / n as f64).exp()).collect();
        let mut best = self.eval(1.0);
        for w in ys.windows(2) {
            let (mut lo, mut hi) = (w[0], w[1]);
            if self.derivative(lo) > 0.0 && self.derivative(hi) <= 0.0 {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.derivative(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                best = best.max(self.eval(0.5 * (lo + hi)));
            }
            best = best.max(self.eval(w[1]));
        }
        Some(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedExponent {
    pub p: f64,
    pub cp: Option<f64>,
    pub kp: Option<f64>,
}

/// Constants predicted from the closed-form formulas of a catalog family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedConstants {
    pub family: String,
    pub beta0: Option<f64>,
    pub eta0: f64,
    pub l0: f64,
    pub k1: f64,
    pub k2: f64,
    /// `(sup_ij k‖b_ij‖∞)²`, the squared gradient bound of the diffusion.
    pub gradient_square: f64,
    pub exponents: Vec<PredictedExponent>,
    /// `-β₀ + X d²/(4η₀²) - η₀`, the closed-form expression of the examples.
    pub sigma0: Option<f64>,
    /// Half the supremum of `r + (k₁²d²/4 - 1)η`, i.e. σ₀ by its definition.
    pub sigma0_definition: Option<f64>,
    pub c1: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(skip)]
    pub(crate) cp_terms: Option<Section5Terms>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Section5Terms {
    dim: f64,
    k: f64,
    m: f64,
    q: f64,
    beta0: f64,
    eta0: f64,
    gradient_square: f64,
    gamma: f64,
}

pub const DEFAULT_P_LIST: [f64; 4] = [1.5, 2.0, 3.0, 4.0];

impl PredictedConstants {
    pub fn cp(&self, p: f64) -> Option<f64> {
        let s = self.cp_terms.as_ref()?;
        if p <= 1.0 {
            return None;
        }
        let mp = m_p(p);
        let mut terms = vec![
            (-s.beta0, s.m),
            ((s.gradient_square * s.dim * s.dim / (4.0 * mp * s.eta0 * s.eta0) - mp) * s.eta0, s.k),
        ];
        if s.gamma > 0.0 {
            terms.push((-(1.0 - 1.0 / p) * s.gamma, s.q));
            terms.push((p * s.q * s.q * s.gamma / (p - 1.0), s.q - 0.5));
        }
        PowerSum::new(&terms).sup()
    }

    pub fn kp(&self, p: f64) -> Option<f64> {
        let s = self.cp_terms.as_ref()?;
        if p <= 1.0 || s.gamma > 0.0 {
            return None;
        }
        let mp = m_p(p);
        PowerSum::new(&[
            (-s.beta0, s.m),
            (s.gradient_square * s.dim * s.dim / (4.0 * s.eta0 * mp), s.k),
        ])
        .sup()
    }

    fn fill_exponents(&mut self) {
        self.exponents = DEFAULT_P_LIST
            .iter()
            .map(|&p| PredictedExponent {
                p,
                cp: self.cp(p),
                kp: self.kp(p),
            })
            .collect();
    }
}

fn violation(inequality: &str) -> OperatorError {
    OperatorError::CatalogConstraint(inequality.to_string())
}

fn is_natural(v: f64) -> bool {
    v >= 0.0 && v.fract() == 0.0
}

fn eigen_range(b: &[f64], d: usize) -> (f64, f64) {
    let ev = SymmetricEigen::new(DMatrix::from_row_slice(d, d, b)).eigenvalues;
    (ev.min(), ev.max())
}

/// Builds a spec of the polynomial families together with its predicted constants.
pub fn catalog_example(family: Family, params: &Section5Params) -> Result<(OperatorSpec, PredictedConstants), OperatorError> {
    let p = params;
    let d = p.dim;
    if d == 0 || d > super::spec::MAX_DIM {
        return Err(violation("1 <= dim <= 8"));
    }
    let b_flat: Vec<f64> = if p.b_matrix.is_empty() {
        (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()
    } else {
        if p.b_matrix.len() != d || p.b_matrix.iter().any(|row| row.len() != d) {
            return Err(violation("b_matrix is dim x dim"));
        }
        p.b_matrix.iter().flatten().copied().collect()
    };
    for i in 0..d {
        for j in 0..d {
            if b_flat[i * d + j] != b_flat[j * d + i] {
                return Err(violation("b_ij = b_ji"));
            }
        }
    }
    if (0..d - 1).any(|i| b_flat[i * d + d - 1] != 0.0) {
        return Err(violation("b_id = 0 for i < d"));
    }
    let (lam_min, lam_max) = eigen_range(&b_flat, d);
    let eta0 = p.eta0.unwrap_or(lam_min);
    if !(eta0 > 0.0 && eta0 <= lam_min) {
        return Err(violation("0 < eta0 <= smallest eigenvalue of B"));
    }
    let gamma_zero = p.gamma == 0.0;
    if p.gamma < 0.0 {
        return Err(violation("gamma >= 0"));
    }
    let k = match family {
        Family::General => {
            if !(p.k > 1.0 && p.m > 1.0 && (gamma_zero || p.q > 1.0)) {
                return Err(violation("k, m, q > 1"));
            }
            if p.k > p.m {
                return Err(violation("k <= m"));
            }
            if !gamma_zero && p.m >= p.q {
                return Err(violation("m < q"));
            }
            p.k
        }
        Family::XIndependent => {
            if !is_natural(p.m) || !(gamma_zero || is_natural(p.q)) {
                return Err(violation("m, q natural numbers"));
            }
            if !gamma_zero && 2.0 * p.q - 1.0 > p.m {
                return Err(violation("2q - 1 <= m"));
            }
            0.0
        }
    };
    if p.b0_amplitude.abs() >= 1.0 {
        return Err(violation("|b0_amplitude| < 1"));
    }
    let theta = p.g0.max(0.0);
    let beta0 = p.b0 * (1.0 - p.b0_amplitude.abs()) - theta;
    if beta0 <= 0.0 {
        return Err(violation("inf b0(t) - max(g0, 0) > 0"));
    }

    let (m, q, gamma, g0) = (p.m, p.q, p.gamma, p.g0);
    let (b0, amp, omega) = (p.b0, p.b0_amplitude, p.b0_frequency);
    let b0_at = move |t: f64| if amp == 0.0 { b0 } else { b0 * (1.0 + amp * (omega * t).sin()) };
    let y_of = |x: &[f64]| 1.0 + x.iter().map(|v| v * v).sum::<f64>();

    let bm = b_flat.clone();
    let diffusion = Arc::new(move |_t: f64, x: &[f64], out: &mut [f64]| {
        let s = if k == 0.0 { 1.0 } else { y_of(x).powf(k) };
        for (o, b) in out.iter_mut().zip(&bm) {
            *o = b * s;
        }
    });
    let drift = Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        let s = b0_at(t) * if m == 0.0 { 1.0 } else { y_of(x).powf(m) };
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -s * xi;
        }
        let dd = x.len() - 1;
        out[dd] += g0 * x[dd];
    });
    let potential: super::spec::ScalarFn = if gamma_zero {
        Arc::new(|_t, _x: &[f64]| 0.0)
    } else {
        Arc::new(move |_t, x: &[f64]| gamma * y_of(x).powf(q))
    };
    let eta = Arc::new(move |_t: f64, x: &[f64]| eta0 * if k == 0.0 { 1.0 } else { y_of(x).powf(k) });
    let r = Arc::new(move |t: f64, x: &[f64]| -(b0_at(t) - theta) * if m == 0.0 { 1.0 } else { y_of(x).powf(m) });
    let beta: Option<super::spec::ScalarFn> = if gamma_zero {
        None
    } else {
        Some(Arc::new(move |_t, x: &[f64]| 2.0 * q * gamma * y_of(x).powf(q - 0.5)))
    };

    let max_b = b_flat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gradient_square = (k * max_b).powi(2);
    let k1 = k * max_b / eta0;
    let k2 = if gamma_zero { 0.0 } else { 2.0 * q };
    let dd = d as f64;
    let kappa = match family {
        Family::XIndependent => Some(if gamma_zero { 0.0 } else { 2.0 * q * gamma / beta0.sqrt() }),
        Family::General => None,
    };
    let lambda = match family {
        Family::XIndependent => Some(lam_max),
        Family::General => None,
    };

    let constants = Constants {
        c0: if gamma_zero { 0.0 } else { gamma },
        eta0,
        k1,
        k2,
        l0: beta0 / eta0,
        l1: 0.0,
        r0: 1.0,
        kappa,
        lambda,
        d0: None,
        time_interval: p.time_interval,
    };
    let structure = Structure {
        autonomous: amp == 0.0 || omega == 0.0,
        diffusion_x_independent: k == 0.0,
        potential_zero: gamma_zero,
    };
    let name = match family {
        Family::General => "section5-general",
        Family::XIndependent => "section5-x-independent",
    };
    let spec = OperatorSpec {
        name: name.to_string(),
        coeffs: Coefficients {
            dim: d,
            diffusion,
            drift,
            potential,
            eta,
            r,
            beta,
        },
        constants,
        structure,
    };

    let sigma_sum = PowerSum::new(&[(-beta0, m), ((k1 * k1 * dd * dd / 4.0 - 1.0) * eta0, k)]).sup();
    let mut predicted = PredictedConstants {
        family: name.to_string(),
        beta0: Some(beta0),
        eta0,
        l0: beta0 / eta0,
        k1,
        k2,
        gradient_square,
        exponents: Vec::new(),
        sigma0: gamma_zero.then(|| -beta0 + gradient_square * dd * dd / (4.0 * eta0 * eta0) - eta0),
        sigma0_definition: if gamma_zero { sigma_sum.map(|s| s / 2.0) } else { None },
        c1: (family == Family::XIndependent).then(|| 4.0 * q * q * gamma * gamma / beta0),
        kappa,
        lambda,
        cp_terms: Some(Section5Terms {
            dim: dd,
            k,
            m,
            q,
            beta0,
            eta0,
            gradient_square,
            gamma,
        }),
    };
    predicted.fill_exponents();
    Ok((spec, predicted))
}

/// `dX = -rate X dt + √2 dW` on the half-space: Q = I, b = -rate·x, c = 0.
pub fn ornstein_uhlenbeck(dim: usize, rate: f64) -> (OperatorSpec, PredictedConstants) {
    let params = Section5Params {
        dim,
        m: 0.0,
        q: 0.0,
        b0: rate,
        ..Default::default()
    };
    let (mut spec, mut pred) = catalog_example(Family::XIndependent, &params).expect("valid OU parameters");
    spec.name = "ornstein-uhlenbeck".into();
    pred.family = spec.name.clone();
    (spec, pred)
}

/// Heat operator `Δ - c` with constant `c ≥ 0`.
pub fn heat(dim: usize, c: f64) -> (OperatorSpec, PredictedConstants) {
    let coeffs = Coefficients {
        dim,
        diffusion: Arc::new(move |_t, _x: &[f64], out: &mut [f64]| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = if i % (dim + 1) == 0 { 1.0 } else { 0.0 };
            }
        }),
        drift: Arc::new(|_t, _x: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
        potential: Arc::new(move |_t, _x: &[f64]| c),
        eta: Arc::new(|_t, _x: &[f64]| 1.0),
        r: Arc::new(|_t, _x: &[f64]| 0.0),
        beta: (c != 0.0).then(|| Arc::new(|_t: f64, _x: &[f64]| 0.0) as super::spec::ScalarFn),
    };
    let constants = Constants {
        c0: c,
        eta0: 1.0,
        k1: 0.0,
        k2: 0.0,
        l0: 1.0,
        l1: 1.0,
        r0: 1.0,
        kappa: Some(0.0),
        lambda: Some(1.0),
        d0: None,
        time_interval: (0.0, f64::INFINITY),
    };
    let spec = OperatorSpec {
        name: "heat".into(),
        coeffs,
        constants,
        structure: Structure {
            autonomous: true,
            diffusion_x_independent: true,
            potential_zero: c == 0.0,
        },
    };
    let pred = PredictedConstants {
        family: "heat".into(),
        beta0: None,
        eta0: 1.0,
        l0: 1.0,
        k1: 0.0,
        k2: 0.0,
        gradient_square: 0.0,
        exponents: Vec::new(),
        sigma0: None,
        sigma0_definition: None,
        c1: Some(0.0),
        kappa: Some(0.0),
        lambda: Some(1.0),
        cp_terms: None,
    };
    (spec, pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Golden-section maximisation on [1, hi].
    fn golden_max(f: impl Fn(f64) -> f64, hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (1.0f64, hi);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        for _ in 0..300 {
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        f(0.5 * (a + b)).max(f(1.0))
    }

    fn base() -> Section5Params {
        Section5Params {
            dim: 1,
            k: 2.0,
            m: 2.0,
            q: 3.0,
            b0: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn worked_example_constants() {
        let (_, pred) = catalog_example(Family::General, &base()).unwrap();
        assert!((pred.kp(2.0).unwrap() - 0.0).abs() < 1e-12);
        assert!((pred.cp(2.0).unwrap() + 1.0).abs() < 1e-12);
        assert!((pred.sigma0.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constraint_violations_are_named() {
        let bad = Section5Params { k: 3.0, ..base() };
        match catalog_example(Family::General, &bad) {
            Err(OperatorError::CatalogConstraint(s)) => assert_eq!(s, "k <= m"),
            other => panic!("{other:?}"),
        }
        let bad = Section5Params {
            m: 3.0,
            q: 2.0,
            gamma: 1.0,
            ..base()
        };
        assert!(matches!(catalog_example(Family::General, &bad), Err(OperatorError::CatalogConstraint(s)) if s == "m < q"));
        let bad = Section5Params {
            m: 2.0,
            q: 2.0,
            gamma: 1.0,
            ..base()
        };
        assert!(matches!(catalog_example(Family::XIndependent, &bad), Err(OperatorError::CatalogConstraint(s)) if s == "2q - 1 <= m"));
        let bad = Section5Params {
            dim: 2,
            b_matrix: vec![vec![1.0, 0.2], vec![0.2, 1.0]],
            ..base()
        };
        assert!(catalog_example(Family::General, &bad).is_err());
    }

    #[test]
    fn ou_constants() {
        let (spec, pred) = ornstein_uhlenbeck(1, 1.0);
        assert_eq!(spec.constants.l0, 1.0);
        assert_eq!(spec.constants.lambda, Some(1.0));
        assert!((pred.cp(2.0).unwrap() + 2.0).abs() < 1e-12);
        assert!((pred.kp(2.0).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pred.sigma0_definition, Some(-1.0));
        assert_eq!(spec.coeffs.b(0.0, &[2.0]), vec![-2.0]);
    }

    #[test]
    fn unbounded_sup_detected() {
        assert_eq!(PowerSum::new(&[(-1.0, 2.0), (2.0, 2.0)]).sup(), None);
        assert_eq!(PowerSum::new(&[(3.0, 0.0)]).sup(), Some(3.0));
    }

    #[test]
    fn potential_family_cp_matches_golden_section() {
        let params = Section5Params {
            dim: 2,
            k: 1.5,
            m: 2.0,
            q: 2.5,
            gamma: 0.3,
            b_matrix: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            b0: 1.5,
            ..Default::default()
        };
        let (_, pred) = catalog_example(Family::General, &params).unwrap();
        let x = (1.5f64 * 2.0).powi(2);
        for &p in &[1.5, 2.0, 4.0] {
            let mp = m_p(p);
            let f = |y: f64| {
                -1.5 * y.powi(2) + (x * 4.0 / (4.0 * mp) - mp) * y.powf(1.5) - (1.0 - 1.0 / p) * 0.3 * y.powf(2.5)
                    + p * 2.5 * 2.5 * 0.3 / (p - 1.0) * y.powf(2.0)
            };
            let want = golden_max(f, 1e4);
            let got = pred.cp(p).unwrap();
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "p={p}: {got} vs {want}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kp_agrees_with_golden_section(k in 1.05f64..3.0, dm in prop_oneof![Just(0.0f64), 0.2f64..1.5], b in 0.2f64..2.0, b0 in 0.5f64..3.0, p in 1.2f64..5.0) {
            let params = Section5Params { k, m: k + dm, b_matrix: vec![vec![b]], b0, ..base() };
            let (_, pred) = catalog_example(Family::General, &params).unwrap();
            let a = (k * b).powi(2) / (4.0 * b * m_p(p));
            let f = |y: f64| -b0 * y.powf(k + dm) + a * y.powf(k);
            match pred.kp(p) {
                Some(got) => {
                    let want = golden_max(f, 1e6);
                    prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{} vs {}", got, want);
                }
                None => prop_assert!(dm < 1e-12 && a > b0),
            }
        }
    }
}
