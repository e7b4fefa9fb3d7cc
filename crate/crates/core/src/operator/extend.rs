//! Reflection of half-space coefficients across the wall `x_d = 0`.
//!
//! Tangential-tangential and normal-normal diffusion entries, tangential drift
//! components and all scalar coefficients are extended evenly; the mixed
//! diffusion entries `q_{id}`, `q_{di}` and the normal drift `b_d` are
//! extended oddly.

use std::sync::Arc;

use super::spec::{boundary_probes, Coefficients, OperatorSpec, Probe, ScalarFn, WholeSpaceSpec, MAX_DIM};
use super::OperatorError;

/// Boundary compatibility tolerance `|q_{id}|, |b_d| ≤ BOUNDARY_TOL (1 + |x|)`.
pub const BOUNDARY_TOL: f64 = 1e-10;

/// Even extension `E f`.
pub fn even(f: impl Fn(&[f64]) -> f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| {
        let d = x.len();
        if x[d - 1] >= 0.0 {
            f(x)
        } else {
            let mut y = [0.0; MAX_DIM];
            y[..d].copy_from_slice(x);
            y[d - 1] = -y[d - 1];
            f(&y[..d])
        }
    }
}

/// Odd extension `O f`.
pub fn odd(f: impl Fn(&[f64]) -> f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| {
        let d = x.len();
        if x[d - 1] >= 0.0 {
            f(x)
        } else {
            let mut y = [0.0; MAX_DIM];
            y[..d].copy_from_slice(x);
            y[d - 1] = -y[d - 1];
            -f(&y[..d])
        }
    }
}

/// Checks `q_{id} = 0 (i < d)` and `b_d = 0` on wall probes.
pub fn check_boundary_compatibility(spec: &OperatorSpec, probes: &[Probe]) -> Result<(), OperatorError> {
    let d = spec.coeffs.dim;
    let mut q = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for p in probes.iter().filter(|p| p.x[d - 1] == 0.0) {
        let tol = BOUNDARY_TOL * (1.0 + p.norm());
        (spec.coeffs.diffusion)(p.t, &p.x, &mut q);
        (spec.coeffs.drift)(p.t, &p.x, &mut b);
        let worst_q = (0..d - 1).map(|i| q[i * d + d - 1].abs()).fold(0.0, f64::max);
        let value = worst_q.max(b[d - 1].abs());
        if value > tol || value.is_nan() {
            return Err(OperatorError::BoundaryIncompatible {
                probe: p.clone(),
                value,
            });
        }
    }
    Ok(())
}

fn reflect_scalar(f: &ScalarFn) -> ScalarFn {
    let f = f.clone();
    Arc::new(move |t, x: &[f64]| even(|y| f(t, y))(x))
}

/// Builds the whole-space extension using a default wall probe grid.
pub fn extend_coefficients(spec: &OperatorSpec) -> Result<WholeSpaceSpec, OperatorError> {
    let d = spec.coeffs.dim;
    let (t0, t1) = spec.constants.time_interval;
    let t1 = if t1.is_finite() { t1 } else { t0 + 10.0 };
    let times: Vec<f64> = (0..5).map(|i| t0 + (t1 - t0) * i as f64 / 4.0).collect();
    let probes = boundary_probes(d, 50.0, 12, &times);
    extend_coefficients_with(spec, &probes)
}

pub fn extend_coefficients_with(spec: &OperatorSpec, probes: &[Probe]) -> Result<WholeSpaceSpec, OperatorError> {
    check_boundary_compatibility(spec, probes)?;
    let d = spec.coeffs.dim;
    let base = spec.coeffs.clone();

    let diff = base.diffusion.clone();
    let diffusion = Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        if x[d - 1] >= 0.0 {
            diff(t, x, out);
            return;
        }
        let mut y = [0.0; MAX_DIM];
        y[..d].copy_from_slice(x);
        y[d - 1] = -y[d - 1];
        diff(t, &y[..d], out);
        for i in 0..d - 1 {
            out[i * d + d - 1] = -out[i * d + d - 1];
            out[(d - 1) * d + i] = -out[(d - 1) * d + i];
        }
    });

    let drift_fn = base.drift.clone();
    let drift = Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        if x[d - 1] >= 0.0 {
            drift_fn(t, x, out);
            return;
        }
        let mut y = [0.0; MAX_DIM];
        y[..d].copy_from_slice(x);
        y[d - 1] = -y[d - 1];
        drift_fn(t, &y[..d], out);
        out[d - 1] = -out[d - 1];
    });

    let coeffs = Coefficients {
        dim: d,
        diffusion,
        drift,
        potential: reflect_scalar(&base.potential),
        eta: reflect_scalar(&base.eta),
        r: reflect_scalar(&base.r),
        beta: base.beta.as_ref().map(reflect_scalar),
    };
    Ok(WholeSpaceSpec {
        name: format!("{}~ext", spec.name),
        coeffs,
        constants: spec.constants.clone(),
        structure: spec.structure,
        epsilon: 0.0,
        source: spec.name.clone(),
    })
}
