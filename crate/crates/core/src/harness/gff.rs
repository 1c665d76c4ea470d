use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{mode_eigenvalue, run_gff_dynamic, TimeGrid};
use crate::error::{invalid, Result};
use crate::homogenize::replicate;
use crate::lattice::TorusGrid;
use crate::noise::NoiseSource;
use crate::stats::{linear_fit, MeanSe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GffParams {
    pub dim: usize,
    pub radius: usize,
    /// Defaults to `L^2 / 2`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Defaults to `1 / (8 d)`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Fourier modes whose autocorrelation is fitted; defaults to three low
    /// modes.
    #[serde(default)]
    pub modes: Vec<Vec<i64>>,
}

/// `G(0, x) = |Lambda|^-1 sum_{k != 0} cos(2 pi k.x / n) / lambda_k`, the
/// stationary covariance of the free-field dynamic.
pub fn gff_covariance(grid: &TorusGrid, offset: &[i64]) -> f64 {
    let n = grid.side();
    let d = grid.dim();
    let total = grid.len();
    let mut k = vec![0i64; d];
    let mut acc = 0.0;
    for idx in 1..total {
        let mut rem = idx;
        for axis in (0..d).rev() {
            k[axis] = (rem % n) as i64;
            rem /= n;
        }
        let phase: f64 = k.iter().zip(offset).map(|(a, b)| (a * b) as f64).sum::<f64>() * 2.0 * PI / n as f64;
        acc += phase.cos() / mode_eigenvalue(&k, n);
    }
    acc / total as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEntry {
    pub offset: Vec<i64>,
    pub empirical: MeanSe,
    pub oracle: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeDecay {
    pub mode: Vec<i64>,
    pub eigenvalue: f64,
    /// Decay rate of the empirical autocorrelation.
    pub fitted_rate: f64,
    /// `(1 - exp(-rate dt)) / dt`, the eigenvalue implied by the explicit
    /// scheme's per-step factor `1 - dt lambda`.
    pub corrected_rate: f64,
    pub relative_error: f64,
    pub lags: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GffReport {
    pub horizon: f64,
    pub dt: f64,
    pub replicas: usize,
    pub covariance: Vec<CovarianceEntry>,
    pub modes: Vec<ModeDecay>,
}

fn default_modes(dim: usize) -> Vec<Vec<i64>> {
    let unit = |axes: &[usize], m: i64| {
        let mut k = vec![0; dim];
        for &a in axes {
            k[a] = m;
        }
        k
    };
    vec![unit(&[0], 1), unit(&[0, 1], 1), unit(&[0], 2)]
}

struct ReplicaStats {
    final_slice: Vec<f64>,
    /// `[mode][lag]` of the time average of `Re(psi_k(s) conj psi_k(s + lag dt))`.
    autocorrelation: Vec<Vec<f64>>,
}

/// Covariance of the free-field dynamic at the horizon and the decay of
/// Fourier-mode autocorrelations, started from exact free-field samples.
pub fn gff_experiment(params: &GffParams, replicas: usize, src: &NoiseSource) -> Result<GffReport> {
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let grid = TorusGrid::new(params.dim, params.radius)?;
    let l = params.radius as f64;
    let horizon = params.horizon.unwrap_or(l * l / 2.0);
    let dt = params.dt.unwrap_or(1.0 / (8.0 * params.dim as f64));
    let time = TimeGrid::new(0.0, horizon, dt)?;
    let modes = if params.modes.is_empty() { default_modes(params.dim) } else { params.modes.clone() };
    if modes.iter().any(|k| k.len() != params.dim || k.iter().all(|&c| c == 0)) {
        return invalid("modes must be nonzero and match the dimension");
    }
    let n = grid.side();
    // cos and sin tables per mode and site.
    let tables: Vec<(Vec<f64>, Vec<f64>)> = modes
        .iter()
        .map(|k| {
            (0..grid.len())
                .map(|x| {
                    let o = grid.offsets(x);
                    let ph = k.iter().zip(&o).map(|(a, b)| (a * b) as f64).sum::<f64>() * 2.0 * PI / n as f64;
                    (ph.cos(), ph.sin())
                })
                .unzip()
        })
        .collect();
    let max_lags: Vec<usize> = modes
        .iter()
        .map(|k| ((1.5 / mode_eigenvalue(k, n) / time.dt).floor() as usize + 1).min(time.steps))
        .collect();
    let results = replicate(replicas, src, |s| {
        let mut series = vec![Vec::with_capacity(time.steps + 1); modes.len()];
        let last = run_gff_dynamic(&grid, &time, s, &mut |_j: usize, _t: f64, u: &[f64]| {
            for (m, (c, sn)) in tables.iter().enumerate() {
                let re: f64 = u.iter().zip(c).map(|(a, b)| a * b).sum();
                let im: f64 = -u.iter().zip(sn).map(|(a, b)| a * b).sum::<f64>();
                series[m].push((re, im));
            }
        })?;
        // Stationary autocorrelation averaged over every time origin.
        let auto = series
            .iter()
            .zip(&max_lags)
            .map(|(z, &lags)| {
                (0..=lags)
                    .map(|lag| {
                        let pairs = z.len() - lag;
                        (0..pairs).map(|i| z[i].0 * z[i + lag].0 + z[i].1 * z[i + lag].1).sum::<f64>() / pairs as f64
                    })
                    .collect()
            })
            .collect();
        Ok(ReplicaStats { final_slice: last, autocorrelation: auto })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let origin = grid.site_at(&vec![0; params.dim]);
    let covariance = (0..grid.len())
        .map(|x| {
            let products: Vec<f64> = results.iter().map(|r| r.final_slice[origin] * r.final_slice[x]).collect();
            let offset = grid.offsets(x);
            CovarianceEntry { oracle: gff_covariance(&grid, &offset), offset, empirical: MeanSe::of(&products) }
        })
        .collect();

    let mut decays = Vec::with_capacity(modes.len());
    for (m, k) in modes.iter().enumerate() {
        let lambda = mode_eigenvalue(k, n);
        let steps = results[0].autocorrelation[m].len();
        let mean_at = |j: usize| results.iter().map(|r| r.autocorrelation[m][j]).sum::<f64>() / results.len() as f64;
        let c0 = mean_at(0);
        // Lags up to about 1.5 e-folding times, where the signal dominates.
        let max_t = 1.5 / lambda;
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for j in 0..steps {
            let t = j as f64 * time.dt;
            if t > max_t {
                break;
            }
            let c = mean_at(j);
            if c <= 0.0 {
                break;
            }
            ts.push(t);
            ys.push((c / c0).ln());
        }
        if ts.len() < 3 {
            return invalid(format!("mode {k:?} decays within fewer than three steps"));
        }
        let fit = linear_fit(&ts, &ys);
        let rate = -fit.slope;
        let corrected = (1.0 - (-rate * time.dt).exp()) / time.dt;
        decays.push(ModeDecay {
            mode: k.clone(),
            eigenvalue: lambda,
            fitted_rate: rate,
            corrected_rate: corrected,
            relative_error: (corrected - lambda).abs() / lambda,
            lags: ts.len(),
        });
    }
    Ok(GffReport { horizon, dt: time.dt, replicas, covariance, modes: decays })
}
