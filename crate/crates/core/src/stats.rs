//! Sample statistics and least-squares helpers shared by the experiments.

use serde::Serialize;

use crate::error::{invalid, Result};

/// Sample mean with its standard error `std / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let m = mean(xs);
        let se = if n > 1 { (sample_variance(xs) / n as f64).sqrt() } else { f64::NAN };
        Self { mean: m, se, n }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample variance and its leave-one-out jackknife standard error.
pub fn variance_with_jackknife(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let full = sample_variance(xs);
    if n < 3 {
        return (full, f64::NAN);
    }
    let sum: f64 = xs.iter().sum();
    let sumsq: f64 = xs.iter().map(|x| x * x).sum();
    let m = (n - 1) as f64;
    let loo: Vec<f64> = xs
        .iter()
        .map(|x| {
            let s = sum - x;
            let q = sumsq - x * x;
            (q - s * s / m) / (m - 1.0)
        })
        .collect();
    let loo_mean = mean(&loo);
    let var = loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>() * (m / n as f64);
    (full, var.sqrt())
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub residuals: Vec<f64>,
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    linear_fit_weighted(xs, ys, &vec![1.0; xs.len()])
}

/// Weighted least squares with weights `w_i` (e.g. inverse variances).
pub fn linear_fit_weighted(xs: &[f64], ys: &[f64], w: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let sw: f64 = w.iter().sum();
    let mx = xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().zip(w).map(|(y, w)| w * (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - intercept - slope * x).collect();
    let sse: f64 = residuals.iter().zip(w).map(|(r, w)| w * r * r).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let dof = xs.len() as f64 - 2.0;
    let (slope_se, intercept_se) = if dof > 0.0 && sxx > 0.0 {
        let s2 = sse / dof;
        ((s2 / sxx).sqrt(), (s2 * (1.0 / sw + mx * mx / sxx)).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    LinearFit { slope, intercept, r2, residuals, slope_se, intercept_se }
}

/// Sum of the componentwise sample variances of vector samples, with its
/// leave-one-out jackknife standard error.
pub fn trace_variance_with_jackknife(samples: &[Vec<f64>]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let d = samples[0].len();
    let mut total = 0.0;
    let mut loo = vec![0.0; n];
    for i in 0..d {
        let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        total += sample_variance(&xs);
        if n >= 3 {
            let sum: f64 = xs.iter().sum();
            let sumsq: f64 = xs.iter().map(|x| x * x).sum();
            let m = (n - 1) as f64;
            for (l, x) in loo.iter_mut().zip(&xs) {
                let s = sum - x;
                *l += (sumsq - x * x - s * s / m) / (m - 1.0);
            }
        }
    }
    if n < 3 {
        return (total, f64::NAN);
    }
    let m = mean(&loo);
    let var = loo.iter().map(|v| (v - m).powi(2)).sum::<f64>() * ((n - 1) as f64 / n as f64);
    (total, var.sqrt())
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(xs: &mut [f64], q: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

/// Least-squares power law `y = exp(log_prefactor) x^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub exponent: f64,
    pub log_prefactor: f64,
    pub r2: f64,
    pub residuals: Vec<f64>,
    pub exponent_se: f64,
}

/// Fits `log y` against `log x`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return invalid("power-law fit needs matching abscissae and values");
    }
    if xs.len() < 3 {
        return invalid("power-law fit needs at least three points");
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return invalid("power-law fit needs strictly positive finite data");
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let f = linear_fit(&lx, &ly);
    Ok(FitResult { exponent: f.slope, log_prefactor: f.intercept, r2: f.r2, residuals: f.residuals, exponent_se: f.slope_se })
}
