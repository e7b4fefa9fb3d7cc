//! Order-fixed reductions, independent of how the work was scheduled.

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(v) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Weighted mean `Σ wᵢ vᵢ / Σ wᵢ`.
pub fn weighted_mean(v: &[f64], w: &[f64]) -> f64 {
    let prod: Vec<f64> = v.iter().zip(w).map(|(a, b)| a * b).collect();
    pairwise_sum(&prod) / pairwise_sum(w)
}
