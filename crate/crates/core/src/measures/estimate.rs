use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MeasureError;
use crate::stochastic::pairwise_sum;

/// How a measure estimate was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Cesaro {
        s: f64,
        x0: Vec<f64>,
        horizon: f64,
        burn_in: f64,
        blowups: usize,
    },
    Pushforward {
        from_time: f64,
        blowups: usize,
    },
    PointMass,
    Cloud,
}

/// A weighted particle cloud on the closed half-space at time `time`.
///
/// Particles are grouped into contiguous blocks of `block` correlated samples
/// (e.g. occupation snapshots of one path); standard errors use block means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub dim: usize,
    pub time: f64,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub block: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub axis: usize,
    pub edges: Vec<f64>,
    /// Probability mass per bin (sums to 1).
    pub masses: Vec<f64>,
}

pub const MAX_BINS: usize = 256;

impl MeasureEstimate {
    /// Builds a measure, normalising the weights to sum 1.
    pub fn new(dim: usize, time: f64, points: Vec<f64>, weights: Vec<f64>, block: usize, provenance: Provenance) -> Result<Self, MeasureError> {
        if dim == 0 || points.len() != weights.len() * dim || weights.is_empty() {
            return Err(MeasureError::Invalid("cloud shape does not match weights".into()));
        }
        if block == 0 || weights.len() % block != 0 {
            return Err(MeasureError::Invalid("block size must divide the particle count".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(MeasureError::Invalid("weights must be finite and nonnegative".into()));
        }
        if points.chunks(dim).any(|p| !(p[dim - 1] >= 0.0) || p.iter().any(|v| !v.is_finite())) {
            return Err(MeasureError::Invalid("support points must be finite with x_d >= 0".into()));
        }
        let total = pairwise_sum(&weights);
        if !(total > 0.0) {
            return Err(MeasureError::Invalid("total weight is zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(MeasureEstimate {
            dim,
            time,
            points,
            weights,
            block,
            provenance,
        })
    }

    /// Equally weighted cloud.
    pub fn uniform(dim: usize, time: f64, points: Vec<f64>, block: usize, provenance: Provenance) -> Result<Self, MeasureError> {
        let n = points.len() / dim.max(1);
        Self::new(dim, time, points, vec![1.0; n], block, provenance)
    }

    pub fn point_mass(x: &[f64], time: f64) -> Result<Self, MeasureError> {
        Self::new(x.len(), time, x.to_vec(), vec![1.0], 1, Provenance::PointMass)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// `⟨μ, f⟩`.
    pub fn expect(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let v: Vec<f64> = (0..self.len()).map(|i| f(self.point(i))).collect();
        self.expect_values(&v).0
    }

    /// `⟨μ, f⟩` and its standard error.
    pub fn expect_with_stderr(&self, f: &dyn Fn(&[f64]) -> f64) -> (f64, f64) {
        let v: Vec<f64> = (0..self.len()).map(|i| f(self.point(i))).collect();
        self.expect_values(&v)
    }

    /// Weighted mean and block standard error of per-particle values.
    pub fn expect_values(&self, values: &[f64]) -> (f64, f64) {
        weighted_block_stats(values, &self.weights, self.block)
    }

    /// `⟨μ, φ_p⟩` with `φ_p(x) = 1 + |x|^{2p}`.
    pub fn phi_moment(&self, p: f64) -> (f64, f64) {
        self.expect_with_stderr(&|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>().powf(p))
    }

    /// `μ(R^d₊ ∖ B_r)`.
    pub fn tail_mass(&self, r: f64) -> f64 {
        self.expect(&|x| if x.iter().map(|v| v * v).sum::<f64>() > r * r { 1.0 } else { 0.0 })
    }

    fn sorted_axis(&self, axis: usize) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = (0..self.len()).map(|i| (self.point(i)[axis], self.weights[i])).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Weighted quantile along one axis.
    pub fn quantile(&self, axis: usize, q: f64) -> f64 {
        let v = self.sorted_axis(axis);
        let mut acc = 0.0;
        for (x, w) in &v {
            acc += w;
            if acc >= q {
                return *x;
            }
        }
        v.last().map_or(f64::NAN, |p| p.0)
    }

    /// Freedman–Diaconis histogram of one axis, at most [`MAX_BINS`] bins.
    pub fn histogram(&self, axis: usize) -> Histogram {
        let v = self.sorted_axis(axis);
        let lo = v[0].0;
        let hi = v[v.len() - 1].0;
        let iqr = self.quantile(axis, 0.75) - self.quantile(axis, 0.25);
        let n_eff = 1.0 / self.weights.iter().map(|w| w * w).sum::<f64>();
        let h = 2.0 * iqr / n_eff.cbrt();
        let bins = if hi > lo && h > 0.0 {
            (((hi - lo) / h).ceil() as usize).clamp(1, MAX_BINS)
        } else {
            1
        };
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut masses = vec![0.0; bins];
        for (x, w) in v {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            masses[k] += w;
        }
        Histogram { axis, edges, masses }
    }

    /// Kolmogorov–Smirnov distance of one marginal from a reference CDF.
    pub fn ks_distance(&self, axis: usize, cdf: &dyn Fn(f64) -> f64) -> f64 {
        let v = self.sorted_axis(axis);
        let mut acc = 0.0;
        let mut d = 0.0f64;
        let mut i = 0;
        while i < v.len() {
            let x = v[i].0;
            let f = cdf(x);
            d = d.max((acc - f).abs());
            while i < v.len() && v[i].0 == x {
                acc += v[i].1;
                i += 1;
            }
            d = d.max((acc - f).abs());
        }
        d
    }

    /// CSV with header `x1..xd,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in 0..self.dim {
            let _ = write!(out, "x{},", a + 1);
        }
        out.push_str("weight\n");
        for i in 0..self.len() {
            for v in self.point(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", self.weights[i]);
        }
        out
    }
}

/// Two-sample sup-CDF distance of one marginal.
pub fn ks_two_sample(a: &MeasureEstimate, b: &MeasureEstimate, axis: usize) -> f64 {
    let va = a.sorted_axis(axis);
    let vb = b.sorted_axis(axis);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut d = 0.0f64;
    while i < va.len() || j < vb.len() {
        let x = match (va.get(i), vb.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => break,
        };
        while i < va.len() && va[i].0 == x {
            fa += va[i].1;
            i += 1;
        }
        while j < vb.len() && vb[j].0 == x {
            fb += vb[j].1;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    d
}

/// Largest per-coordinate two-sample distance (the full KS distance in 1D).
pub fn sup_cdf_distance(a: &MeasureEstimate, b: &MeasureEstimate) -> f64 {
    (0..a.dim.min(b.dim)).map(|k| ks_two_sample(a, b, k)).fold(0.0, f64::max)
}

/// Weighted mean with standard error from contiguous blocks.
pub fn weighted_block_stats(values: &[f64], weights: &[f64], block: usize) -> (f64, f64) {
    let total = pairwise_sum(weights);
    let prod: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    let mean = pairwise_sum(&prod) / total;
    let nb = values.len() / block;
    if nb < 2 {
        return (mean, 0.0);
    }
    let terms: Vec<f64> = (0..nb)
        .map(|b| {
            let r = b * block..(b + 1) * block;
            let wb = pairwise_sum(&weights[r.clone()]) / total;
            let sb = pairwise_sum(&prod[r]) / total;
            // W_b (m_b - mean) = S_b - W_b mean
            let dev = sb - wb * mean;
            dev * dev
        })
        .collect();
    let var = pairwise_sum(&terms) * nb as f64 / (nb - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn point_mass_moments_and_tails() {
        let m = MeasureEstimate::point_mass(&[0.0, 0.0], 0.0).unwrap();
        for p in [1.0, 1.5, 2.0] {
            assert_eq!(m.phi_moment(p).0, 1.0);
        }
        assert_eq!(m.tail_mass(0.5), 0.0);
    }

    #[test]
    fn rejects_points_below_wall() {
        assert!(MeasureEstimate::uniform(1, 0.0, vec![0.5, -0.1], 1, Provenance::Cloud).is_err());
        assert!(MeasureEstimate::new(1, 0.0, vec![0.5], vec![-1.0], 1, Provenance::Cloud).is_err());
    }

    #[test]
    fn equal_weight_stderr_matches_classical() {
        let v = [1.0, 2.0, 4.0, 7.0];
        let (m, se) = weighted_block_stats(&v, &[1.0; 4], 1);
        let (m2, se2) = crate::stochastic::mean_and_stderr(&v);
        assert!((m - m2).abs() < 1e-15);
        assert!((se - se2).abs() < 1e-14);
    }

    #[test]
    fn ks_of_uniform_grid() {
        let n = 1000;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let m = MeasureEstimate::uniform(1, 0.0, pts, 1, Provenance::Cloud).unwrap();
        let d = m.ks_distance(0, &|x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
        let h = m.histogram(0);
        assert!(h.masses.len() <= MAX_BINS);
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn permutation_invariant(pts in proptest::collection::vec(0.0f64..5.0, 2..60), seed in 0u64..1000) {
            let w: Vec<f64> = (0..pts.len()).map(|i| 1.0 + ((i as u64 * 31 + seed) % 7) as f64).collect();
            let a = MeasureEstimate::new(1, 0.0, pts.clone(), w.clone(), 1, Provenance::Cloud).unwrap();
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            idx.reverse();
            idx.rotate_left((seed as usize) % pts.len());
            let b = MeasureEstimate::new(1, 0.0, idx.iter().map(|&i| pts[i]).collect(), idx.iter().map(|&i| w[i]).collect(), 1, Provenance::Cloud).unwrap();
            prop_assert!((a.phi_moment(1.0).0 - b.phi_moment(1.0).0).abs() < 1e-10);
            prop_assert!((a.tail_mass(2.0) - b.tail_mass(2.0)).abs() < 1e-12);
            prop_assert!(ks_two_sample(&a, &b, 0) < 1e-12);
        }

        #[test]
        fn chebyshev_holds_on_any_cloud(pts in proptest::collection::vec(0.0f64..10.0, 1..80), r in 0.1f64..12.0) {
            let m = MeasureEstimate::uniform(1, 0.0, pts, 1, Provenance::Cloud).unwrap();
            prop_assert!(m.tail_mass(r) <= m.phi_moment(1.0).0 / (r * r) + 1e-12);
        }
    }
}
