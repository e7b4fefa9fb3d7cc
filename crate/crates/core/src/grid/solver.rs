//! θ-scheme finite differences for `u_t = A(t)u` on a truncated box.
//!
//! Second-order central differences in space (per-node upwinding of the drift
//! when the cell Péclet number exceeds one), mirror ghost nodes on reflecting
//! faces, and Strang splitting for the potential: the zeroth-order term is
//! applied as exact exponential half-steps around the diffusion–drift step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{bicgstab, thomas, Csr};
use super::mesh::{Bc, Field, Grid};
use super::GridError;
use crate::operator::spec::{Domain, Operator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// θ = 1/2, falling back to θ = 1 when the positivity check fails.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtificialBoundary {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub radius: f64,
    pub nodes: Vec<usize>,
    pub dt: f64,
    #[serde(default = "default_theta")]
    pub theta: ThetaMode,
    #[serde(default = "default_artificial")]
    pub artificial_boundary: ArtificialBoundary,
    /// Replace the first θ < 1 step by four implicit Euler substeps.
    #[serde(default = "default_true")]
    pub rannacher: bool,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
}

fn default_theta() -> ThetaMode {
    ThetaMode::Auto
}
fn default_artificial() -> ArtificialBoundary {
    ArtificialBoundary::Neumann
}
fn default_true() -> bool {
    true
}
fn default_solver_tol() -> f64 {
    1e-10
}

impl GridConfig {
    pub fn new(radius: f64, nodes: Vec<usize>, dt: f64) -> Self {
        GridConfig {
            radius,
            nodes,
            dt,
            theta: ThetaMode::Auto,
            artificial_boundary: ArtificialBoundary::Neumann,
            rannacher: true,
            solver_tol: 1e-10,
        }
    }

    /// Halves the mesh width and quarters the time step.
    pub fn refined(&self) -> Self {
        GridConfig {
            nodes: self.nodes.iter().map(|n| 2 * n - 1).collect(),
            dt: self.dt / 4.0,
            ..self.clone()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::Config(m.to_string()));
        if !(1..=3).contains(&dim) {
            return bad("grids support dimensions 1 to 3");
        }
        if self.nodes.len() != dim {
            return bad("one node count per axis required");
        }
        if self.nodes.iter().any(|&n| n < 8) {
            return bad("node counts must be at least 8 per axis");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if let ThetaMode::Fixed(th) = self.theta {
            if !(0.5..=1.0).contains(&th) {
                return bad("theta must lie in [1/2, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Face {
    Reflect,
    Fixed,
}

struct Layout {
    grid: Grid,
    fixed: Vec<bool>,
}

impl Layout {
    fn new(grid: Grid, bc: Bc, artificial: ArtificialBoundary) -> Self {
        let d = grid.dim();
        let art = match artificial {
            ArtificialBoundary::Neumann => Face::Reflect,
            ArtificialBoundary::Dirichlet => Face::Fixed,
        };
        let faces: Vec<(Face, Face)> = (0..d)
            .map(|a| {
                if a + 1 == d {
                    let wall = match bc {
                        Bc::Dirichlet => Face::Fixed,
                        Bc::Neumann => Face::Reflect,
                        Bc::WholeSpace => art,
                    };
                    (wall, art)
                } else {
                    (art, art)
                }
            })
            .collect();
        let mut idx = [0usize; 3];
        let fixed = (0..grid.len())
            .map(|n| {
                grid.multi_index(n, &mut idx[..d]);
                (0..d).any(|a| {
                    (idx[a] == 0 && faces[a].0 == Face::Fixed) || (idx[a] + 1 == grid.counts[a] && faces[a].1 == Face::Fixed)
                })
            })
            .collect();
        Layout { grid, fixed }
    }

    /// Index along `axis` shifted by `delta`, mirrored across reflecting faces.
    fn shift(&self, axis: usize, i: usize, delta: isize) -> usize {
        let n = self.grid.counts[axis] as isize;
        let j = i as isize + delta;
        let j = if j < 0 { -j } else if j >= n { 2 * (n - 1) - j } else { j };
        j as usize
    }
}

/// Assembles the spatial operator `A(τ) - c` without the potential.
fn assemble(op: &dyn Operator, layout: &Layout, tau: f64) -> Csr {
    let g = &layout.grid;
    let d = g.dim();
    let co = op.coefficients();
    let h: Vec<f64> = (0..d).map(|a| g.spacing(a)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..g.len())
        .into_par_iter()
        .map(|node| {
            if layout.fixed[node] {
                return Vec::new();
            }
            let mut idx = [0usize; 3];
            let mut x = [0.0f64; 3];
            g.multi_index(node, &mut idx[..d]);
            for a in 0..d {
                x[a] = g.coord(a, idx[a]);
            }
            let mut q = [0.0f64; 9];
            let mut b = [0.0f64; 3];
            (co.diffusion)(tau, &x[..d], &mut q[..d * d]);
            (co.drift)(tau, &x[..d], &mut b[..d]);
            let at = |shifts: &[(usize, isize)]| {
                let mut j = idx;
                for &(a, delta) in shifts {
                    j[a] = layout.shift(a, idx[a], delta);
                }
                g.node_index(&j[..d])
            };
            let mut row = Vec::with_capacity(1 + 2 * d + 4 * d * d);
            for a in 0..d {
                let qa = q[a * d + a];
                let ha = h[a];
                let (m, p) = (at(&[(a, -1)]), at(&[(a, 1)]));
                row.push((p, qa / (ha * ha)));
                row.push((m, qa / (ha * ha)));
                row.push((node, -2.0 * qa / (ha * ha)));
                let ba = b[a];
                if ba.abs() * ha > 2.0 * qa {
                    if ba > 0.0 {
                        row.push((p, ba / ha));
                        row.push((node, -ba / ha));
                    } else {
                        row.push((node, ba / ha));
                        row.push((m, -ba / ha));
                    }
                } else {
                    row.push((p, ba / (2.0 * ha)));
                    row.push((m, -ba / (2.0 * ha)));
                }
                for bb in a + 1..d {
                    let qab = q[a * d + bb];
                    if qab == 0.0 {
                        continue;
                    }
                    let w = 2.0 * qab / (4.0 * ha * h[bb]);
                    row.push((at(&[(a, 1), (bb, 1)]), w));
                    row.push((at(&[(a, 1), (bb, -1)]), -w));
                    row.push((at(&[(a, -1), (bb, 1)]), -w));
                    row.push((at(&[(a, -1), (bb, -1)]), w));
                }
            }
            row
        })
        .collect();
    Csr::from_rows(rows)
}

/// Largest `(1-θ)Δt` for which `I + (1-θ)Δt L` has a nonnegative diagonal.
fn positivity(l: &Csr) -> f64 {
    let max_diag = (0..l.n).map(|i| -l.diag(i)).fold(0.0f64, f64::max);
    if max_diag > 0.0 {
        1.0 / max_diag
    } else {
        f64::INFINITY
    }
}

struct Stepper<'a> {
    op: &'a dyn Operator,
    layout: Layout,
    autonomous: bool,
    cached_l: Option<Csr>,
    tol: f64,
    potential_zero: bool,
}

impl Stepper<'_> {
    fn operator_at(&mut self, tau: f64) -> Csr {
        if self.autonomous {
            if self.cached_l.is_none() {
                self.cached_l = Some(assemble(self.op, &self.layout, tau));
            }
            self.cached_l.clone().unwrap()
        } else {
            assemble(self.op, &self.layout, tau)
        }
    }

    fn potential_half_step(&self, u: &mut [f64], tau: f64, dt: f64) {
        if self.potential_zero {
            return;
        }
        let g = &self.layout.grid;
        let d = g.dim();
        let c = &self.op.coefficients().potential;
        u.par_iter_mut().enumerate().for_each(|(n, v)| {
            let mut x = [0.0; 3];
            g.node_coords(n, &mut x[..d]);
            *v *= (-0.5 * dt * c(tau, &x[..d])).exp();
        });
    }

    /// One θ-step from `tau` to `tau + dt`.
    fn step(&mut self, u: &mut Vec<f64>, tau: f64, dt: f64, theta: f64) -> Result<(), GridError> {
        self.potential_half_step(u, tau, dt);
        let n = u.len();
        let mut rhs = vec![0.0; n];
        if theta < 1.0 {
            let l0 = self.operator_at(tau);
            l0.matvec(u, &mut rhs);
            for i in 0..n {
                rhs[i] = u[i] + (1.0 - theta) * dt * rhs[i];
            }
        } else {
            rhs.copy_from_slice(u);
        }
        for (r, &f) in rhs.iter_mut().zip(&self.layout.fixed) {
            if f {
                *r = 0.0;
            }
        }
        let l1 = self.operator_at(tau + dt);
        let a = l1.shifted_identity(-theta * dt, &self.layout.fixed);
        if let Some((lo, di, up)) = a.tridiagonal() {
            *u = thomas(&lo, &di, &up, &rhs);
        } else {
            bicgstab(&a, &rhs, u, self.tol, 20_000).map_err(|s| GridError::LinearSolve {
                time: tau + dt,
                residual: s.relative_residual,
            })?;
        }
        self.potential_half_step(u, tau + dt, dt);
        Ok(())
    }
}

/// Solves `u_t = A(τ)u` for τ ∈ [s, max(times)], `u(s) = f`, returning the
/// solution at `s` and at every entry of `times`.
pub fn solve(
    op: &dyn Operator,
    bc: Bc,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    s: f64,
    times: &[f64],
    cfg: &GridConfig,
) -> Result<Field, GridError> {
    let d = op.dim();
    cfg.validate(d)?;
    match (op.domain(), bc) {
        (Domain::WholeSpace, Bc::WholeSpace) | (Domain::HalfSpace, Bc::Dirichlet | Bc::Neumann) => {}
        _ => return Err(GridError::Config("boundary condition does not match the operator domain".into())),
    }
    if times.is_empty() || times[0] <= s || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GridError::Config("snapshot times must be strictly increasing and after s".into()));
    }

    let grid = Grid::for_domain(d, cfg.radius, cfg.nodes.clone(), bc == Bc::WholeSpace);
    let layout = Layout::new(grid.clone(), bc, cfg.artificial_boundary);

    let mut u = vec![0.0; grid.len()];
    let mut corner = false;
    {
        let mut x = [0.0; 3];
        for (n, v) in u.iter_mut().enumerate() {
            grid.node_coords(n, &mut x[..d]);
            let val = f(&x[..d]);
            if layout.fixed[n] {
                if bc == Bc::Dirichlet && x[d - 1] == 0.0 && val.abs() > 1e-12 {
                    corner = true;
                }
                *v = 0.0;
            } else {
                *v = val;
            }
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(GridError::NonFinite { step: 0, time: s });
    }

    let structure = op.structure();
    let mut stepper = Stepper {
        op,
        layout,
        autonomous: structure.autonomous,
        cached_l: None,
        tol: cfg.solver_tol,
        potential_zero: structure.potential_zero,
    };

    // positivity check on the initial operator and the requested step
    let l0 = stepper.operator_at(s);
    let dt_max = positivity(&l0);
    let requested = match cfg.theta {
        ThetaMode::Auto => 0.5,
        ThetaMode::Fixed(t) => t,
    };
    let admissible = |theta: f64, dt: f64| theta >= 1.0 || (1.0 - theta) * dt <= dt_max;
    let theta = if admissible(requested, cfg.dt) {
        requested
    } else {
        match cfg.theta {
            ThetaMode::Auto => 1.0,
            ThetaMode::Fixed(t) => {
                return Err(GridError::Positivity {
                    theta: t,
                    dt: cfg.dt,
                    dt_max: dt_max / (1.0 - t),
                })
            }
        }
    };

    let mut field = Field {
        bc,
        grid,
        times: vec![s],
        values: vec![u.clone()],
        corner_discontinuity: corner,
        theta,
        steps: 0,
    };
    let mut tau = s;
    let mut step_no = 0usize;
    for &target in times {
        let len = target - tau;
        let n = ((len / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
        let dt = len / n as f64;
        for k in 0..n {
            let t_next = if k + 1 == n { target } else { tau + dt };
            let h = t_next - tau;
            if theta < 1.0 && step_no == 0 && cfg.rannacher {
                for j in 0..4 {
                    stepper.step(&mut u, tau + j as f64 * h / 4.0, h / 4.0, 1.0)?;
                }
            } else {
                if theta < 1.0 && !structure.autonomous {
                    let dm = positivity(&stepper.operator_at(tau));
                    if (1.0 - theta) * h > dm {
                        return Err(GridError::Positivity {
                            theta,
                            dt: h,
                            dt_max: dm / (1.0 - theta),
                        });
                    }
                }
                stepper.step(&mut u, tau, h, theta)?;
            }
            step_no += 1;
            tau = t_next;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(GridError::NonFinite { step: step_no, time: tau });
            }
        }
        field.times.push(target);
        field.values.push(u.clone());
    }
    field.steps = step_no;
    Ok(field)
}
