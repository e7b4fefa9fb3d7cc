use serde::{Deserialize, Serialize};

/// Relative slack allowed on fitted decay rates.
pub const SLOPE_SLACK: f64 = 0.15;

/// Smallest acceptable coefficient of determination.
pub const MIN_R_SQUARED: f64 = 0.9;

/// Least-squares fit of `log y` against `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub series: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
    /// Times actually used (the largest suffix with R² ≥ 0.9).
    pub times: Vec<f64>,
    /// Target rate; the fit passes when `slope ≤ bound`.
    pub target: f64,
    pub bound: f64,
    pub conclusive: bool,
    pub pass: bool,
}

pub(crate) struct Line {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub se: f64,
}

pub(crate) fn least_squares(t: &[f64], y: &[f64]) -> Line {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|v| (v - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let ssr: f64 = t.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    let se = if t.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Line { slope, intercept, r2, se }
}

/// Fits `log y ~ a + slope·t` over the largest suffix of the series whose
/// R² is at least 0.9, and checks `slope ≤ target + 15%·|target|`.
/// Non-positive values are dropped; fewer than three usable points, or no
/// suffix with enough R², give an inconclusive fit.
pub fn fit_slope(series: &str, t: &[f64], y: &[f64], target: f64) -> SlopeFit {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(a, v)| (*a, v.ln()))
        .collect();
    let bound = target + SLOPE_SLACK * target.abs();
    let mut fit = SlopeFit {
        series: series.to_string(),
        slope: f64::NAN,
        intercept: f64::NAN,
        r_squared: f64::NAN,
        ci: (f64::NAN, f64::NAN),
        times: Vec::new(),
        target,
        bound,
        conclusive: false,
        pass: false,
    };
    if pts.len() < 3 {
        return fit;
    }
    let mut chosen = None;
    for start in 0..=pts.len() - 3 {
        let (ts, ys): (Vec<f64>, Vec<f64>) = pts[start..].iter().copied().unzip();
        let line = least_squares(&ts, &ys);
        if line.r2 >= MIN_R_SQUARED {
            chosen = Some((ts, line));
            break;
        }
    }
    let (ts, line, conclusive) = match chosen {
        Some((ts, line)) => (ts, line, true),
        None => {
            let (ts, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let line = least_squares(&ts, &ys);
            (ts, line, false)
        }
    };
    fit.slope = line.slope;
    fit.intercept = line.intercept;
    fit.r_squared = line.r2;
    fit.ci = (line.slope - 1.96 * line.se, line.slope + 1.96 * line.se);
    fit.times = ts;
    fit.conclusive = conclusive;
    fit.pass = conclusive && line.slope <= bound;
    fit
}
