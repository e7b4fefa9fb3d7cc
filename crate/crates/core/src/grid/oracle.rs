//! Method-of-images solutions of `u_t = Δu - c u` on the half-line.

use super::mesh::Bc;
use super::GridError;
use crate::operator::spec::{log_probe_grid, OperatorSpec};
use crate::quadrature::integrate;

const WINDOW: f64 = 14.0;
const ABS_TOL: f64 = 1e-12;
const REL_TOL: f64 = 1e-10;

/// Heat kernel `(4πτ)^{-1/2} exp(-z²/(4τ))` of `u_t = u_xx`.
pub fn heat_kernel(tau: f64, z: f64) -> f64 {
    (-z * z / (4.0 * tau)).exp() / (4.0 * std::f64::consts::PI * tau).sqrt()
}

fn image_sign(bc: Bc) -> Result<f64, GridError> {
    match bc {
        Bc::Dirichlet => Ok(-1.0),
        Bc::Neumann => Ok(1.0),
        Bc::WholeSpace => Err(GridError::OracleNotApplicable("the image oracle is for half-space problems".into())),
    }
}

fn window(tau: f64, x: f64) -> (f64, f64) {
    let w = WINDOW * tau.sqrt();
    ((x - w).max(0.0), x + w)
}

/// `e^{-c(t-s)} ∫_0^∞ [Φ(t-s, x-y) ∓ Φ(t-s, x+y)] f(y) dy` (minus for Dirichlet).
pub fn image_kernel_oracle(f: &dyn Fn(f64) -> f64, s: f64, t: f64, x: f64, bc: Bc, c: f64) -> Result<f64, GridError> {
    let sign = image_sign(bc)?;
    let tau = t - s;
    if !(tau > 0.0) {
        return Err(GridError::Config("oracle requires t > s".into()));
    }
    let (a, b) = window(tau, x);
    let (v, _) = integrate(|y| (heat_kernel(tau, x - y) + sign * heat_kernel(tau, x + y)) * f(y), a, b, ABS_TOL, REL_TOL);
    Ok(v * (-c * tau).exp())
}

/// x-derivative of [`image_kernel_oracle`], by differentiating the kernel.
pub fn image_kernel_oracle_gradient(f: &dyn Fn(f64) -> f64, s: f64, t: f64, x: f64, bc: Bc, c: f64) -> Result<f64, GridError> {
    let sign = image_sign(bc)?;
    let tau = t - s;
    if !(tau > 0.0) {
        return Err(GridError::Config("oracle requires t > s".into()));
    }
    let (a, b) = window(tau, x);
    let dk = |z: f64| -z / (2.0 * tau) * heat_kernel(tau, z);
    let (v, _) = integrate(|y| (dk(x - y) + sign * dk(x + y)) * f(y), a, b, ABS_TOL, REL_TOL);
    Ok(v * (-c * tau).exp())
}

/// Tensor-product data `f(x) = Π f_i(x_i)`: free heat flow in the tangential
/// coordinates, images in the normal one.
pub fn image_kernel_tensor(factors: &[&dyn Fn(f64) -> f64], s: f64, t: f64, x: &[f64], bc: Bc, c: f64) -> Result<f64, GridError> {
    let d = factors.len();
    if x.len() != d || d == 0 {
        return Err(GridError::Config("one factor per coordinate required".into()));
    }
    let tau = t - s;
    let mut acc = image_kernel_oracle(factors[d - 1], s, t, x[d - 1], bc, c)?;
    for i in 0..d - 1 {
        let w = WINDOW * tau.sqrt();
        let (v, _) = integrate(|y| heat_kernel(tau, x[i] - y) * factors[i](y), x[i] - w, x[i] + w, ABS_TOL, REL_TOL);
        acc *= v;
    }
    Ok(acc)
}

/// Verifies `Q = I`, `b = 0`, `c` constant on a probe grid and returns `c`.
pub fn oracle_potential(spec: &OperatorSpec) -> Result<f64, GridError> {
    let d = spec.coeffs.dim;
    let (t0, _) = spec.constants.time_interval;
    let probes = log_probe_grid(d, 20.0, 6, &[t0, t0 + 1.0, t0 + 10.0]);
    let c0 = spec.coeffs.c(probes[0].t, &probes[0].x);
    for p in &probes {
        let q = spec.coeffs.q(p.t, &p.x);
        let b = spec.coeffs.b(p.t, &p.x);
        let identity = q.iter().enumerate().all(|(i, v)| *v == if i % (d + 1) == 0 { 1.0 } else { 0.0 });
        if !identity || b.iter().any(|v| *v != 0.0) || spec.coeffs.c(p.t, &p.x) != c0 {
            return Err(GridError::OracleNotApplicable(format!(
                "coefficients are not Q = I, b = 0, c constant at t={}, x={:?}",
                p.t, p.x
            )));
        }
    }
    Ok(c0)
}
