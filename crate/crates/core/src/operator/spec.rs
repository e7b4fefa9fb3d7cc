use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Largest spatial dimension supported by the stack-buffer evaluators.
pub const MAX_DIM: usize = 8;

pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Black-box coefficient evaluators of `A(t) = Tr(Q D²) + <b, ∇> - c`.
///
/// `diffusion` writes the d×d matrix row-major into its output slice, `drift`
/// writes the d-vector. All evaluators must be pure.
#[derive(Clone)]
pub struct Coefficients {
    pub dim: usize,
    pub diffusion: MatrixFn,
    pub drift: VectorFn,
    pub potential: ScalarFn,
    /// Ellipticity minorant η.
    pub eta: ScalarFn,
    /// Dissipativity majorant r.
    pub r: ScalarFn,
    /// Majorant β of |∇c|; `None` when c ≡ 0.
    pub beta: Option<ScalarFn>,
}

impl Coefficients {
    pub fn q(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.diffusion)(t, x, &mut out);
        out
    }

    pub fn b(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(t, x, &mut out);
        out
    }

    pub fn c(&self, t: f64, x: &[f64]) -> f64 {
        (self.potential)(t, x)
    }

    pub fn beta_at(&self, t: f64, x: &[f64]) -> f64 {
        self.beta.as_ref().map_or(0.0, |b| b(t, x))
    }
}

impl fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficients").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Structural constants declared with an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c0: f64,
    pub eta0: f64,
    pub k1: f64,
    pub k2: f64,
    pub l0: f64,
    pub l1: f64,
    pub r0: f64,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Optional user-supplied d₀ for the p = 1 estimate with x-dependent diffusion.
    #[serde(default)]
    pub d0: Option<f64>,
    /// Time interval `I` as `(start, end)`; `end` may be infinite.
    #[serde(default = "default_interval")]
    pub time_interval: (f64, f64),
}

fn default_interval() -> (f64, f64) {
    (0.0, f64::INFINITY)
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c0: 0.0,
            eta0: 1.0,
            k1: 0.0,
            k2: 0.0,
            l0: 1.0,
            l1: 0.0,
            r0: 1.0,
            kappa: None,
            lambda: None,
            d0: None,
            time_interval: default_interval(),
        }
    }
}

/// Structural facts about the coefficients that downstream pipelines branch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    /// Coefficients do not depend on t.
    pub autonomous: bool,
    /// Diffusion coefficients do not depend on x.
    pub diffusion_x_independent: bool,
    /// c ≡ 0.
    pub potential_zero: bool,
}

/// Where an operator's coefficients live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    HalfSpace,
    WholeSpace,
}

/// A nonautonomous operator on the closed half-space `{x_d ≥ 0}`.
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub name: String,
    pub coeffs: Coefficients,
    pub constants: Constants,
    pub structure: Structure,
}

/// An operator on all of R^d, obtained from a half-space spec by reflection
/// and (optionally) mollification at radius `epsilon` (0 = not mollified).
#[derive(Clone, Debug)]
pub struct WholeSpaceSpec {
    pub name: String,
    pub coeffs: Coefficients,
    pub constants: Constants,
    pub structure: Structure,
    pub epsilon: f64,
    pub source: String,
}

/// Common view used by the solvers.
pub trait Operator: Send + Sync {
    fn name(&self) -> &str;
    fn coefficients(&self) -> &Coefficients;
    fn constants(&self) -> &Constants;
    fn structure(&self) -> Structure;
    fn domain(&self) -> Domain;

    fn dim(&self) -> usize {
        self.coefficients().dim
    }
}

impl Operator for OperatorSpec {
    fn name(&self) -> &str {
        &self.name
    }
    fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }
    fn constants(&self) -> &Constants {
        &self.constants
    }
    fn structure(&self) -> Structure {
        self.structure
    }
    fn domain(&self) -> Domain {
        Domain::HalfSpace
    }
}

impl Operator for WholeSpaceSpec {
    fn name(&self) -> &str {
        &self.name
    }
    fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }
    fn constants(&self) -> &Constants {
        &self.constants
    }
    fn structure(&self) -> Structure {
        self.structure
    }
    fn domain(&self) -> Domain {
        Domain::WholeSpace
    }
}

/// A space-time sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Probe {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Probe { t, x }
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Points `{0} ∪ logspace(r_min, r_max, n)` in increasing order.
pub fn log_axis(r_min: f64, r_max: f64, n: usize) -> Vec<f64> {
    let mut pts = vec![0.0];
    if n == 1 {
        pts.push(r_max);
    } else if n > 1 {
        let (a, b) = (r_min.ln(), r_max.ln());
        pts.extend((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()));
    }
    pts
}

/// Tensor grid of probes, log-spaced in each coordinate up to `r_max`:
/// the last axis uses `{0} ∪ logspace`, the tangential axes use its
/// symmetric counterpart, and every point is repeated at each time in `times`.
pub fn log_probe_grid(dim: usize, r_max: f64, n_per_axis: usize, times: &[f64]) -> Vec<Probe> {
    let r_min = (r_max * 1e-3).min(1e-2);
    let normal = log_axis(r_min, r_max, n_per_axis);
    let mut tangential: Vec<f64> = normal.iter().skip(1).map(|v| -v).rev().collect();
    tangential.extend(normal.iter().copied());
    let axes: Vec<&[f64]> = (0..dim)
        .map(|i| if i + 1 == dim { normal.as_slice() } else { tangential.as_slice() })
        .collect();
    let mut points = vec![Vec::with_capacity(dim)];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    let mut out = Vec::with_capacity(points.len() * times.len());
    for &t in times {
        out.extend(points.iter().map(|x| Probe::new(t, x.clone())));
    }
    out
}

/// Probes on the wall `x_d = 0`.
pub fn boundary_probes(dim: usize, r_max: f64, n_per_axis: usize, times: &[f64]) -> Vec<Probe> {
    log_probe_grid(dim, r_max, n_per_axis, times)
        .into_iter()
        .filter(|p| p.x[dim - 1] == 0.0)
        .collect()
}
