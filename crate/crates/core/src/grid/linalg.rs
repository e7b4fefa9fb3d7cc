//! Sparse matrices and the linear solvers used by the θ-scheme.

use rayon::prelude::*;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == i).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        });
    }

    /// `I + alpha·self` (rows whose `fixed` flag is set become identity rows).
    pub fn shifted_identity(&self, alpha: f64, fixed: &[bool]) -> Csr {
        let rows = (0..self.n)
            .map(|i| {
                if fixed[i] {
                    return vec![(i, 1.0)];
                }
                let mut r: Vec<(usize, f64)> = self.row(i).map(|(c, v)| (c, alpha * v)).collect();
                r.push((i, 1.0));
                r
            })
            .collect();
        Csr::from_rows(rows)
    }

    /// Dense tridiagonal bands, if every row couples only to `i-1, i, i+1`.
    pub fn tridiagonal(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            for (c, v) in self.row(i) {
                if c == i {
                    di[i] = v;
                } else if c + 1 == i {
                    lo[i] = v;
                } else if c == i + 1 {
                    up[i] = v;
                } else {
                    return None;
                }
            }
        }
        Some((lo, di, up))
    }
}

/// Thomas algorithm; `lo[0]` and `up[n-1]` are ignored.
pub fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up[0] / di[0];
    d[0] = rhs[0] / di[0];
    for i in 1..n {
        let m = di[i] - lo[i] * c[i - 1];
        c[i] = if i + 1 < n { up[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // fixed-order reduction keeps results independent of the thread count
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned BiCGSTAB; `x` holds the initial guess on entry.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats, SolveStats> {
    let n = a.n;
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.diag(i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let r0 = r.clone();
    let mut res = dot(&r, &r).sqrt() / bnorm;
    if res <= tol {
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: res,
        });
    }
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_diag[i] * p[i];
        }
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats {
                iterations: it,
                relative_residual: dot(&s, &s).sqrt() / bnorm,
            });
        }
        for i in 0..n {
            z[i] = inv_diag[i] * s[i];
        }
        a.matvec(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
    }
    Err(SolveStats {
        iterations: max_iter,
        relative_residual: res,
    })
}
