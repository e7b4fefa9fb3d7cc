use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sum::{mean_and_stderr, pairwise_sum};
use super::{McConfig, McError, Regime};
use crate::grid::Bc;
use crate::operator::extend::extend_coefficients;
use crate::operator::spec::{Coefficients, Domain, Operator, OperatorSpec, MAX_DIM};

/// Terminal states of a batch of particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub dim: usize,
    pub regime: Regime,
    /// Coefficient time at which every path starts (latest time).
    pub t: f64,
    /// Coefficient time at which the paths end.
    pub s: f64,
    /// `particles × dim`, folded states for the folded regime.
    pub states: Vec<f64>,
    pub alive: Vec<bool>,
    /// `∫ c` along each path (left Riemann sums).
    pub potential_integral: Vec<f64>,
    pub folds: Vec<u32>,
    pub blown_up: Vec<bool>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn blowup_count(&self) -> usize {
        self.blown_up.iter().filter(|b| **b).count()
    }

    pub fn survival_fraction(&self) -> f64 {
        self.alive.iter().filter(|a| **a).count() as f64 / self.len() as f64
    }

    /// Feynman–Kac weight `1_{alive} e^{-∫c}` of particle `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if self.alive[i] {
            (-self.potential_integral[i]).exp()
        } else {
            0.0
        }
    }

    /// CSV with header `particle,x1..xd,weight,survival`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("particle,");
        for a in 0..self.dim {
            let _ = write!(out, "x{},", a + 1);
        }
        out.push_str("weight,survival\n");
        for i in 0..self.len() {
            let _ = write!(out, "{i},");
            for v in self.state(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{}", self.weight(i), u8::from(self.alive[i]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub particles: usize,
    pub blowups: usize,
    pub survival_fraction: f64,
}

struct Ctx {
    coeffs: Coefficients,
    d: usize,
    regime: Regime,
    const_sigma: Option<[f64; MAX_DIM * MAX_DIM]>,
    bridge: bool,
    blowup: f64,
    potential_zero: bool,
    seed: u64,
    antithetic: bool,
}

struct Outcome {
    alive: bool,
    integral: f64,
    folds: u32,
    blown: bool,
}

/// Lower Cholesky factor of `2Q` (row-major), `None` if not positive definite.
fn cholesky_2q(q: &[f64], d: usize) -> Option<[f64; MAX_DIM * MAX_DIM]> {
    let mut l = [0.0; MAX_DIM * MAX_DIM];
    for i in 0..d {
        for j in 0..=i {
            let mut s = 2.0 * q[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

impl Ctx {
    fn new(op: &dyn Operator, regime: Regime, cfg: &McConfig) -> Result<Self, McError> {
        cfg.validate()?;
        let coeffs = match (op.domain(), regime) {
            (Domain::HalfSpace, Regime::Free) => return Err(McError::Regime(Regime::Free)),
            (Domain::HalfSpace, Regime::Folded) => {
                let spec = OperatorSpec {
                    name: op.name().to_string(),
                    coeffs: op.coefficients().clone(),
                    constants: op.constants().clone(),
                    structure: op.structure(),
                };
                extend_coefficients(&spec).map_err(|e| McError::Operator(e.to_string()))?.coeffs
            }
            _ => op.coefficients().clone(),
        };
        let d = coeffs.dim;
        let st = op.structure();
        let const_sigma = if st.diffusion_x_independent && st.autonomous {
            let t0 = op.constants().time_interval.0;
            let x0 = [0.0; MAX_DIM];
            let q = coeffs.q(t0, &x0[..d]);
            Some(cholesky_2q(&q, d).ok_or_else(|| McError::Cholesky {
                t: t0,
                x: x0[..d].to_vec(),
            })?)
        } else {
            None
        };
        Ok(Ctx {
            coeffs,
            d,
            regime,
            const_sigma,
            bridge: cfg.bridge_correction,
            blowup: cfg.blowup(),
            potential_zero: st.potential_zero,
            seed: cfg.seed,
            antithetic: cfg.antithetic,
        })
    }

    fn rng(&self, particle: usize) -> (ChaCha8Rng, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        if self.antithetic {
            rng.set_stream((particle / 2) as u64);
            (rng, if particle % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            rng.set_stream(particle as u64);
            (rng, 1.0)
        }
    }

    fn report(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        if self.regime == Regime::Folded {
            out[self.d - 1] = out[self.d - 1].abs();
        }
    }

    /// Runs one particle from coefficient time `t_hi` for `n` steps of size `dt`.
    /// `snap_steps` (sorted) selects step indices whose states go to `snaps`.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        particle: usize,
        x: &mut [f64],
        t_hi: f64,
        n: usize,
        dt: f64,
        snap_steps: &[usize],
        snaps: &mut [f64],
    ) -> Result<Outcome, McError> {
        let d = self.d;
        let (mut rng, sign) = self.rng(particle);
        let sqdt = dt.sqrt();
        let mut out = Outcome {
            alive: true,
            integral: 0.0,
            folds: 0,
            blown: false,
        };
        if self.regime == Regime::Killed && !(x[d - 1] > 0.0) {
            out.alive = false;
        }
        let mut q = [0.0; MAX_DIM * MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        let mut xi = [0.0; MAX_DIM];
        let mut sig_buf;
        let mut snap_i = 0;
        let mut k = 0;
        let mut record = |k: usize, x: &[f64], snap_i: &mut usize| {
            while *snap_i < snap_steps.len() && snap_steps[*snap_i] == k {
                self.report(x, &mut snaps[*snap_i * d..(*snap_i + 1) * d]);
                *snap_i += 1;
            }
        };
        while k < n && out.alive && !out.blown {
            record(k, x, &mut snap_i);
            let tau = t_hi - k as f64 * dt;
            if !self.potential_zero {
                out.integral += (self.coeffs.potential)(tau, x) * dt;
            }
            (self.coeffs.drift)(tau, x, &mut b[..d]);
            let sigma: &[f64] = match &self.const_sigma {
                Some(s) => s,
                None => {
                    (self.coeffs.diffusion)(tau, x, &mut q[..d * d]);
                    sig_buf = cholesky_2q(&q[..d * d], d).ok_or_else(|| McError::Cholesky { t: tau, x: x.to_vec() })?;
                    &sig_buf
                }
            };
            for v in xi[..d].iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sign * z;
            }
            let old_last = x[d - 1];
            let mut r2 = 0.0;
            for i in 0..d {
                let mut noise = 0.0;
                for j in 0..=i {
                    noise += sigma[i * d + j] * xi[j];
                }
                x[i] += b[i] * dt + noise * sqdt;
                r2 += x[i] * x[i];
            }
            let new_last = x[d - 1];
            match self.regime {
                Regime::Killed => {
                    if new_last <= 0.0 {
                        out.alive = false;
                    } else if self.bridge {
                        let qdd = match self.const_sigma {
                            Some(s) => {
                                let row = &s[(d - 1) * d..d * d];
                                0.5 * row.iter().map(|v| v * v).sum::<f64>()
                            }
                            None => q[d * d - 1],
                        };
                        let p = (-old_last * new_last / (qdd * dt)).exp();
                        let u: f64 = rng.random();
                        if u < p {
                            out.alive = false;
                        }
                    }
                }
                Regime::Folded => {
                    if (old_last < 0.0) != (new_last < 0.0) {
                        out.folds += 1;
                    }
                }
                Regime::Free => {}
            }
            if !(r2 <= self.blowup * self.blowup) {
                out.blown = true;
            }
            k += 1;
        }
        if out.alive && !out.blown {
            record(k, x, &mut snap_i);
        }
        // dead or blown particles keep their last state in any remaining snapshots
        while snap_i < snap_steps.len() {
            self.report(x, &mut snaps[snap_i * d..(snap_i + 1) * d]);
            snap_i += 1;
        }
        Ok(out)
    }
}

fn steps(s: f64, t: f64, dt: f64) -> Result<(usize, f64), McError> {
    if !(t >= s) {
        return Err(McError::Config("requires t >= s".into()));
    }
    if t == s {
        return Ok((0, 0.0));
    }
    let n = ((t - s) / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((n, (t - s) / n as f64))
}

struct Batch {
    states: Vec<f64>,
    outcomes: Vec<Outcome>,
    snaps: Vec<f64>,
}

fn run_batch(
    ctx: &Ctx,
    count: usize,
    start: &(dyn Fn(usize) -> (Vec<f64>, f64, usize, f64) + Sync),
    snap_steps: &[usize],
) -> Result<Batch, McError> {
    let d = ctx.d;
    let k = snap_steps.len();
    let results: Vec<Result<(Vec<f64>, Outcome, Vec<f64>), McError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let (mut x, t_hi, n, dt) = start(i);
            let mut snaps = vec![0.0; k * d];
            let o = ctx.run(i, &mut x, t_hi, n, dt, snap_steps, &mut snaps)?;
            let mut reported = vec![0.0; d];
            ctx.report(&x, &mut reported);
            Ok((reported, o, snaps))
        })
        .collect();
    let mut batch = Batch {
        states: Vec::with_capacity(count * d),
        outcomes: Vec::with_capacity(count),
        snaps: Vec::with_capacity(count * k * d),
    };
    for r in results {
        let (x, o, sn) = r?;
        batch.states.extend(x);
        batch.outcomes.push(o);
        batch.snaps.extend(sn);
    }
    Ok(batch)
}

fn ensemble(regime: Regime, d: usize, s: f64, t: f64, batch: Batch) -> (PathEnsemble, Vec<f64>) {
    let e = PathEnsemble {
        dim: d,
        regime,
        t,
        s,
        states: batch.states,
        alive: batch.outcomes.iter().map(|o| o.alive).collect(),
        potential_integral: batch.outcomes.iter().map(|o| o.integral).collect(),
        folds: batch.outcomes.iter().map(|o| o.folds).collect(),
        blown_up: batch.outcomes.iter().map(|o| o.blown).collect(),
    };
    (e, batch.snaps)
}

/// Simulates `cfg.particles` paths from `x0` over coefficient times `t → s`.
pub fn simulate(op: &dyn Operator, regime: Regime, s: f64, t: f64, x0: &[f64], cfg: &McConfig) -> Result<PathEnsemble, McError> {
    Ok(simulate_snapshots(op, regime, s, t, x0, cfg, &[])?.0)
}

/// As [`simulate`], additionally recording states at the given path times
/// (rounded to the step grid). Snapshots are `particles × times × dim`.
pub fn simulate_snapshots(
    op: &dyn Operator,
    regime: Regime,
    s: f64,
    t: f64,
    x0: &[f64],
    cfg: &McConfig,
    path_times: &[f64],
) -> Result<(PathEnsemble, Vec<f64>), McError> {
    let ctx = Ctx::new(op, regime, cfg)?;
    if x0.len() != ctx.d {
        return Err(McError::Config("start point has the wrong dimension".into()));
    }
    let (n, dt) = steps(s, t, cfg.dt)?;
    let mut snap_steps: Vec<usize> = path_times
        .iter()
        .map(|&p| if dt > 0.0 { ((p / dt).round() as usize).min(n) } else { 0 })
        .collect();
    snap_steps.sort_unstable();
    let x0 = x0.to_vec();
    let start = move |_i: usize| (x0.clone(), t, n, dt);
    let batch = run_batch(&ctx, cfg.particles, &start, &snap_steps)?;
    Ok(ensemble(regime, ctx.d, s, t, batch))
}

/// One path per start point (`starts` is `particles × dim`).
pub fn simulate_cloud(op: &dyn Operator, regime: Regime, s: f64, t: f64, starts: &[f64], cfg: &McConfig) -> Result<PathEnsemble, McError> {
    let ctx = Ctx::new(op, regime, cfg)?;
    let d = ctx.d;
    if starts.is_empty() || starts.len() % d != 0 {
        return Err(McError::Config("start cloud has the wrong shape".into()));
    }
    let (n, dt) = steps(s, t, cfg.dt)?;
    let start = |i: usize| (starts[i * d..(i + 1) * d].to_vec(), t, n, dt);
    let batch = run_batch(&ctx, starts.len() / d, &start, &[])?;
    Ok(ensemble(regime, d, s, t, batch).0)
}

/// Particle `i` runs from coefficient time `s + horizons[i]` down to `s`.
pub fn simulate_horizons(
    op: &dyn Operator,
    regime: Regime,
    s: f64,
    horizons: &[f64],
    x0: &[f64],
    cfg: &McConfig,
) -> Result<PathEnsemble, McError> {
    let ctx = Ctx::new(op, regime, cfg)?;
    let d = ctx.d;
    let plan: Vec<(usize, f64)> = horizons.iter().map(|&h| steps(s, s + h, cfg.dt)).collect::<Result<_, _>>()?;
    let t_max = horizons.iter().copied().fold(s, f64::max);
    let start = |i: usize| (x0.to_vec(), s + horizons[i], plan[i].0, plan[i].1);
    let batch = run_batch(&ctx, horizons.len(), &start, &[])?;
    Ok(ensemble(regime, d, s, t_max, batch).0)
}

pub fn regime_for(bc: Bc) -> Regime {
    match bc {
        Bc::Dirichlet => Regime::Killed,
        Bc::Neumann => Regime::Folded,
        Bc::WholeSpace => Regime::Free,
    }
}

/// Per-particle Feynman–Kac values `1_{alive} e^{-∫c} f(X)`.
pub fn fk_values(ens: &PathEnsemble, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
    (0..ens.len())
        .map(|i| {
            let w = ens.weight(i);
            if w == 0.0 {
                0.0
            } else {
                w * f(ens.state(i))
            }
        })
        .collect()
}

/// Mean and standard error; antithetic pairs are averaged first.
pub fn estimate_from_values(values: &[f64], antithetic: bool) -> (f64, f64) {
    if antithetic && values.len() >= 4 {
        let pairs: Vec<f64> = values.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let (_, se) = mean_and_stderr(&pairs);
        (pairwise_sum(values) / values.len() as f64, se)
    } else {
        mean_and_stderr(values)
    }
}

/// Monte Carlo estimate of `G_bc(t,s)f(x0)` with its standard error.
pub fn feynman_kac(
    op: &dyn Operator,
    bc: Bc,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    s: f64,
    t: f64,
    x0: &[f64],
    cfg: &McConfig,
) -> Result<FkEstimate, McError> {
    let ens = simulate(op, regime_for(bc), s, t, x0, cfg)?;
    let values = fk_values(&ens, f);
    let (estimate, stderr) = estimate_from_values(&values, cfg.antithetic);
    Ok(FkEstimate {
        estimate,
        stderr,
        particles: ens.len(),
        blowups: ens.blowup_count(),
        survival_fraction: ens.survival_fraction(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::catalog;
    use std::sync::Arc;

    #[test]
    fn constant_datum_neumann_is_exact() {
        let (spec, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let cfg = McConfig::new(500, 0.01, 1);
        let e = feynman_kac(&spec, Bc::Neumann, &|_| 1.0, 0.0, 1.0, &[0.3], &cfg).unwrap();
        assert_eq!(e.estimate, 1.0);
        assert_eq!(e.stderr, 0.0);
        let (heat, _) = catalog::heat(1, 0.5);
        let e = feynman_kac(&heat, Bc::Neumann, &|_| 1.0, 0.0, 2.0, &[0.3], &cfg).unwrap();
        assert!((e.estimate - (-1.0f64).exp()).abs() < 1e-12);
        assert!(e.stderr < 1e-15);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (spec, _) = catalog::ornstein_uhlenbeck(2, 1.0);
        let cfg = McConfig::new(300, 0.02, 42);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&spec, Regime::Killed, 0.0, 1.0, &[0.2, 0.5], &cfg).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn folded_states_in_half_space_and_sign_symmetric() {
        let (spec, _) = catalog::ornstein_uhlenbeck(1, 1.0);
        let cfg = McConfig::new(4000, 0.01, 7);
        let a = simulate(&spec, Regime::Folded, 0.0, 2.0, &[0.7], &cfg).unwrap();
        let b = simulate(&spec, Regime::Folded, 0.0, 2.0, &[-0.7], &McConfig { seed: 8, ..cfg }).unwrap();
        assert!(a.states.iter().all(|v| *v >= 0.0));
        assert!(a.folds.iter().any(|f| *f > 0));
        // the start sign only matters in distribution
        let (ma, sa) = mean_and_stderr(&a.states);
        let (mb, sb) = mean_and_stderr(&b.states);
        assert!((ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt());
    }

    #[test]
    fn degenerate_diffusion_rejected() {
        let (mut spec, _) = catalog::heat(1, 0.0);
        spec.coeffs.diffusion = Arc::new(|_t, _x: &[f64], out: &mut [f64]| out[0] = 0.0);
        let cfg = McConfig::new(10, 0.01, 1);
        assert!(matches!(
            simulate(&spec, Regime::Killed, 0.0, 1.0, &[1.0], &cfg),
            Err(McError::Cholesky { .. })
        ));
        assert!(matches!(
            simulate(&spec, Regime::Free, 0.0, 1.0, &[1.0], &cfg),
            Err(McError::Regime(Regime::Free))
        ));
    }

    #[test]
    fn blowups_are_counted() {
        let (mut spec, _) = catalog::heat(1, 0.0);
        spec.coeffs.drift = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0]);
        spec.structure.autonomous = true;
        let mut cfg = McConfig::new(50, 0.01, 3);
        cfg.blowup_radius = Some(50.0);
        let e = simulate(&spec, Regime::Folded, 0.0, 5.0, &[2.0], &cfg).unwrap();
        assert!(e.blowup_count() > 0);
    }

    #[test]
    fn antithetic_pairs_mirror_noise() {
        let (spec, _) = catalog::heat(1, 0.0);
        let mut cfg = McConfig::new(4, 0.1, 9);
        cfg.antithetic = true;
        let e = simulate(&spec, Regime::Killed, 0.0, 0.0, &[1.0], &cfg).unwrap();
        assert_eq!(e.states, vec![1.0; 4]);
        let (ws, _) = catalog::heat(1, 0.0);
        let ws = extend_coefficients(&ws).unwrap();
        let e = simulate(&ws, Regime::Free, 0.0, 1.0, &[0.0], &cfg).unwrap();
        assert!((e.state(0)[0] + e.state(1)[0]).abs() < 1e-12);
        assert!((e.state(2)[0] + e.state(3)[0]).abs() < 1e-12);
        assert!(e.to_csv().starts_with("particle,x1,weight,survival\n0,"));
    }
}
