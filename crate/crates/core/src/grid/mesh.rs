//! Uniform tensor grids and time-stamped nodal fields.

use serde::{Deserialize, Serialize};

use super::GridError;

/// Boundary condition tag of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bc {
    Dirichlet,
    Neumann,
    WholeSpace,
}

impl Bc {
    pub fn tag(self) -> u8 {
        match self {
            Bc::Dirichlet => 0,
            Bc::Neumann => 1,
            Bc::WholeSpace => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Bc> {
        match tag {
            0 => Some(Bc::Dirichlet),
            1 => Some(Bc::Neumann),
            2 => Some(Bc::WholeSpace),
            _ => None,
        }
    }
}

/// Uniform tensor grid; axis 0 varies fastest in the node numbering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub counts: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Grid {
    pub fn new(counts: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Grid { counts, lower, upper }
    }

    /// Half-space box `[-R, R]^{d-1} × [0, R]`, or `[-R, R]^d` for the whole space.
    pub fn for_domain(dim: usize, radius: f64, counts: Vec<usize>, whole_space: bool) -> Self {
        let lower = (0..dim)
            .map(|i| if i + 1 == dim && !whole_space { 0.0 } else { -radius })
            .collect();
        Grid::new(counts, lower, vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.counts[..axis].iter().product()
    }

    pub fn multi_index(&self, mut node: usize, out: &mut [usize]) {
        for (a, &n) in self.counts.iter().enumerate() {
            out[a] = node % n;
            node /= n;
        }
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().map(|(a, &i)| i * self.stride(a)).sum()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn node_coords(&self, node: usize, out: &mut [f64]) {
        let mut idx = [0usize; 3];
        let d = self.dim();
        self.multi_index(node, &mut idx[..d]);
        for a in 0..d {
            out[a] = self.coord(a, idx[a]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(a, &v)| v >= self.lower[a] - 1e-12 && v <= self.upper[a] + 1e-12)
    }

    /// Multilinear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let d = self.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..d {
            let h = self.spacing(a);
            let s = ((x[a] - self.lower[a]) / h).clamp(0.0, (self.counts[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.counts[a] - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut node = 0;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                node += (base[a] + bit) * self.stride(a);
            }
            if w != 0.0 {
                acc += w * values[node];
            }
        }
        Some(acc)
    }
}

/// Nodal solution snapshots `u(t_k, x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub bc: Bc,
    pub grid: Grid,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Dirichlet data not vanishing on the wall (solution discontinuous at the corner).
    pub corner_discontinuity: bool,
    /// Scheme parameter actually used.
    pub theta: f64,
    pub steps: usize,
}

impl Field {
    pub fn time_index(&self, t: f64) -> Result<usize, GridError> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or(GridError::TimeNotStored(t))
    }

    pub fn at(&self, t: f64) -> Result<&[f64], GridError> {
        Ok(&self.values[self.time_index(t)?])
    }

    pub fn interpolate(&self, t: f64, x: &[f64]) -> Result<Option<f64>, GridError> {
        Ok(self.grid.interpolate(self.at(t)?, x))
    }

    pub fn max_norm(&self, t: f64) -> Result<f64, GridError> {
        Ok(self.at(t)?.iter().fold(0.0, |m, v| m.max(v.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_coords() {
        let g = Grid::for_domain(2, 2.0, vec![5, 3], false);
        assert_eq!(g.len(), 15);
        let mut idx = [0usize; 2];
        for n in 0..g.len() {
            g.multi_index(n, &mut idx);
            assert_eq!(g.node_index(&idx), n);
        }
        assert_eq!(g.coord(0, 0), -2.0);
        assert_eq!(g.coord(1, 0), 0.0);
        assert_eq!(g.coord(1, 2), 2.0);
    }

    #[test]
    fn interpolation_exact_on_bilinear() {
        let g = Grid::new(vec![6, 7], vec![-1.0, 0.0], vec![1.0, 3.0]);
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let mut vals = vec![0.0; g.len()];
        let mut x = [0.0; 2];
        for (n, v) in vals.iter_mut().enumerate() {
            g.node_coords(n, &mut x);
            *v = f(&x);
        }
        for &p in &[[0.13, 0.77], [-1.0, 3.0], [0.999, 0.001]] {
            assert!((g.interpolate(&vals, &p).unwrap() - f(&p)).abs() < 1e-12);
        }
        assert!(g.interpolate(&vals, &[2.0, 0.0]).is_none());
    }
}
