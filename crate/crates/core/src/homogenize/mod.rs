//! Monte Carlo estimators built on the corrector: finite-volume surface
//! tension and its Hessian, concentration of fluxes and correctors, slope
//! stability, the linearization modulus, large-scale regularity, and the
//! two-scale expansion.

mod excess;
mod two_scale;

pub use excess::{excess_decay, excess_experiment, ExcessAccumulator, ExcessExperiment, ExcessProfile};
pub use two_scale::{
    aggregate_error, build_two_scale, error_terms, flux_error_field, flux_weak_norm, mesoscale, multiscale_dual_estimate,
    ErrorTerms, TwoScaleExpansion, TwoScaleOptions,
};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    default_dt, evolve_torus, evolve_torus_coupled, mode_eigenvalue, run_stationary_periodic, SlopePath,
    StationaryStart, TimeGrid,
};
use crate::error::{invalid, Error, Result};
use crate::lattice::{ParabolicCylinder, TorusGrid};
use crate::noise::NoiseSource;
use crate::parabolic::LinearizedCorrector;
use crate::potential::Potential;
use crate::stats::{self, fit_power_law, linear_fit, FitResult, LinearFit, MeanSe};

/// Runs `f` on replicas `0..replicas` of `src` in parallel; results come
/// back in replica order.
pub fn replicate<T: Send>(
    replicas: usize,
    src: &NoiseSource,
    f: impl Fn(&NoiseSource) -> Result<T> + Sync,
) -> Vec<Result<T>> {
    (0..replicas as u32).into_par_iter().map(|r| f(&src.with_replica(r))).collect()
}

fn split_failures<T>(results: Vec<Result<T>>) -> Result<(Vec<T>, usize)> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = 0;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    if ok.len() < 2 {
        return Err(last_err.unwrap_or_else(|| Error::InvalidParameter("need at least two replicas".into())));
    }
    Ok((ok, failed))
}

/// Normalized trapezoid weights of a cylinder's time interval on the slice
/// indices of a time grid, with the cylinder's sites.
#[derive(Debug, Clone)]
pub struct Window {
    pub sites: Vec<usize>,
    j0: usize,
    j1: usize,
}

impl Window {
    pub fn new(grid: &TorusGrid, time: &TimeGrid, q: &ParabolicCylinder) -> Result<Self> {
        let index = |t: f64| -> Result<usize> {
            let j = ((t - time.s_minus) / time.dt).round();
            if j < -1e-9 || j > time.steps as f64 + 1e-9 {
                return Err(Error::TimeRange(format!("time {t} outside the simulated interval")));
            }
            Ok(j as usize)
        };
        let (j0, j1) = (index(q.s_minus)?, index(q.s_plus)?);
        if j1 <= j0 {
            return Err(Error::TimeRange("window spans no time step".into()));
        }
        Ok(Self { sites: q.sites(grid)?, j0, j1 })
    }

    /// Normalized trapezoid weight of slice `j`.
    pub fn weight(&self, j: usize) -> f64 {
        if j < self.j0 || j > self.j1 {
            return 0.0;
        }
        let w = if j == self.j0 || j == self.j1 { 0.5 } else { 1.0 };
        w / (self.j1 - self.j0) as f64
    }

    pub fn first(&self) -> usize {
        self.j0
    }
}

/// Slope input of [`estimate_tau`].
#[derive(Debug, Clone, PartialEq)]
pub enum TauSlope {
    /// Stationary dynamic at a fixed slope.
    Constant(Vec<f64>),
    /// Dynamic with a time-dependent slope, started from zero at the
    /// path's first breakpoint.
    Path(SlopePath),
}

impl TauSlope {
    fn dim(&self) -> usize {
        match self {
            Self::Constant(p) => p.len(),
            Self::Path(q) => q.dim(),
        }
    }

    fn final_slope(&self) -> Vec<f64> {
        match self {
            Self::Constant(p) => p.clone(),
            Self::Path(q) => q.at(0.0).to_vec(),
        }
    }
}

/// Numerical settings shared by the torus estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimatorOptions {
    /// Time step; defaults to `1 / (8 d c_plus)`.
    pub dt: Option<f64>,
    /// Stationary initialization; defaults to [`StationaryStart::default_for`].
    pub start: Option<StationaryStart>,
}

impl EstimatorOptions {
    fn dt(&self, dim: usize, v: &Potential) -> f64 {
        self.dt.unwrap_or_else(|| default_dt(dim, v.c_plus()))
    }
}

/// Monte Carlo estimate of `tau_L(p) = E[(V'(p + grad phi))_{Q_{L/2}}]`.
#[derive(Debug, Clone, Serialize)]
pub struct FluxEstimate {
    pub slope: Vec<f64>,
    pub window_radius: usize,
    pub window_duration: f64,
    pub replicas: usize,
    pub failed: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl FluxEstimate {
    fn from_samples(slope: Vec<f64>, radius: usize, samples: &[Vec<f64>], failed: usize) -> Self {
        let d = slope.len();
        let (mean, se) = (0..d)
            .map(|i| {
                let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
                let m = MeanSe::of(&xs);
                (m.mean, m.se)
            })
            .unzip();
        Self {
            slope,
            window_radius: radius,
            window_duration: (radius * radius) as f64,
            replicas: samples.len(),
            failed,
            mean,
            se,
        }
    }
}

/// One replica's window average of `V'(q + grad phi)` over `Q_{L/2}`.
pub fn tau_sample(l: usize, slope: &TauSlope, v: &Potential, src: &NoiseSource, opts: &EstimatorOptions) -> Result<Vec<f64>> {
    if l < 2 {
        return invalid("torus radius must be at least 2");
    }
    let d = slope.dim();
    let grid = TorusGrid::new(d, l)?;
    let half = l / 2;
    let dt = opts.dt(d, v);
    let window_q = ParabolicCylinder::standard(d, half)?;
    let mut acc = vec![0.0; d];
    let mut flux = vec![0.0; grid.len() * d];
    match slope {
        TauSlope::Constant(p) => {
            let time = TimeGrid::new(-((half * half) as f64), 0.0, dt)?;
            let window = Window::new(&grid, &time, &window_q)?;
            let path = SlopePath::constant(p);
            let start = opts.start.unwrap_or_else(|| StationaryStart::default_for(v, &grid));
            let mut obs = |j: usize, t: f64, u: &[f64]| accumulate_flux(&grid, v, path.at(t), u, &window, j, &mut flux, &mut acc);
            run_stationary_periodic(&grid, p, v, src, start, &time, &mut obs)?;
        }
        TauSlope::Path(q) => {
            if !q.start().is_finite() || q.start() > -((half * half) as f64) {
                return invalid("slope path must start before the averaging window");
            }
            let time = TimeGrid::new(q.start(), 0.0, dt)?;
            let window = Window::new(&grid, &time, &window_q)?;
            let mut obs = |j: usize, t: f64, u: &[f64]| accumulate_flux(&grid, v, q.at(t), u, &window, j, &mut flux, &mut acc);
            evolve_torus(&grid, v, q, Some(src), vec![0.0; grid.len()], &time, &mut obs)?;
        }
    }
    Ok(acc)
}

#[allow(clippy::too_many_arguments)]
fn accumulate_flux(
    grid: &TorusGrid,
    v: &Potential,
    q: &[f64],
    u: &[f64],
    window: &Window,
    j: usize,
    flux: &mut [f64],
    acc: &mut [f64],
) {
    let w = window.weight(j);
    if w == 0.0 {
        return;
    }
    let d = grid.dim();
    crate::dynamics::edge_fluxes(grid, v, q, u, flux);
    let scale = w / window.sites.len() as f64;
    for &x in &window.sites {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += scale * flux[x * d + i];
        }
    }
}

/// Mean and standard error of the flux average over `Q_{L/2}` across
/// replicas of the stationary slope-`p` dynamic on the torus of radius `L`.
pub fn estimate_tau(
    slope: &TauSlope,
    l: usize,
    v: &Potential,
    replicas: usize,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<FluxEstimate> {
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let results = replicate(replicas, src, |s| tau_sample(l, slope, v, s, opts));
    let (samples, failed) = split_failures(results)?;
    Ok(FluxEstimate::from_samples(slope.final_slope(), l / 2, &samples, failed))
}

/// Monte Carlo estimate of `D tau_L(p)`; `matrix[(j, i)] = d_i tau_{L,j}`.
#[derive(Debug, Clone, Serialize)]
pub struct HessianEstimate {
    pub slope: Vec<f64>,
    pub replicas: usize,
    pub failed: usize,
    pub matrix: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// Eigenvalues of the symmetrized matrix, ascending.
    pub eigenvalues: Vec<f64>,
    pub positive_definite: bool,
}

/// One replica of `(V''(p + grad phi) (e_i + grad w_{p, e_i}))_{Q_{L/2}}`
/// for every direction, flattened as `[j * d + i]`.
pub fn hessian_sample(l: usize, p: &[f64], v: &Potential, src: &NoiseSource, opts: &EstimatorOptions) -> Result<Vec<f64>> {
    if l < 2 {
        return invalid("torus radius must be at least 2");
    }
    let d = p.len();
    let grid = TorusGrid::new(d, l)?;
    let dt = opts.dt(d, v);
    let time = TimeGrid::new(-((l * l) as f64), 0.0, dt)?;
    let half = l / 2;
    let window = Window::new(&grid, &time, &ParabolicCylinder::standard(d, half)?)?;
    let mut lins: Vec<LinearizedCorrector> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            LinearizedCorrector::new(&grid, v, p, &e, time.dt)
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; d * d];
    let start = opts.start.unwrap_or_else(|| StationaryStart::default_for(v, &grid));
    let mut obs = |j: usize, _t: f64, u: &[f64]| {
        let w = window.weight(j);
        let scale = w / window.sites.len() as f64;
        for (i, lin) in lins.iter_mut().enumerate() {
            lin.load_coefficients(&grid, v, u);
            if w > 0.0 {
                let coef = lin.coefficients();
                for &x in &window.sites {
                    for jj in 0..d {
                        let delta = if jj == i { 1.0 } else { 0.0 };
                        acc[jj * d + i] += scale * coef[x * d + jj] * (delta + grid.grad(&lin.w, x, jj));
                    }
                }
            }
            if j < time.steps {
                lin.advance_loaded(&grid);
            }
        }
    };
    run_stationary_periodic(&grid, p, v, src, start, &time, &mut obs)?;
    Ok(acc)
}

pub fn estimate_hessian(
    p: &[f64],
    l: usize,
    v: &Potential,
    replicas: usize,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<HessianEstimate> {
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let d = p.len();
    let results = replicate(replicas, src, |s| hessian_sample(l, p, v, s, opts));
    let (samples, failed) = split_failures(results)?;
    let mut matrix = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for j in 0..d {
        for i in 0..d {
            let xs: Vec<f64> = samples.iter().map(|s| s[j * d + i]).collect();
            let m = MeanSe::of(&xs);
            matrix[j][i] = m.mean;
            se[j][i] = m.se;
        }
    }
    let sym = DMatrix::from_fn(d, d, |a, b| 0.5 * (matrix[a][b] + matrix[b][a]));
    let mut eigenvalues: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let positive_definite = eigenvalues.iter().all(|&e| e > 0.0);
    Ok(HessianEstimate { slope: p.to_vec(), replicas: samples.len(), failed, matrix, se, eigenvalues, positive_definite })
}

/// Per-replica averages of the flux and of the gradient over `Q_ell`
/// (centered boxes ending at the final time) for several scales.
pub struct ScaleAverages<'a> {
    grid: &'a TorusGrid,
    v: &'a Potential,
    p: Vec<f64>,
    windows: Vec<Window>,
    flux: Vec<f64>,
    /// `[scale][component]`
    pub flux_avg: Vec<Vec<f64>>,
    pub grad_avg: Vec<Vec<f64>>,
}

impl<'a> ScaleAverages<'a> {
    pub fn new(grid: &'a TorusGrid, v: &'a Potential, p: &[f64], time: &TimeGrid, scales: &[usize]) -> Result<Self> {
        let d = grid.dim();
        let windows = scales
            .iter()
            .map(|&ell| Window::new(grid, time, &ParabolicCylinder::standard(d, ell)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            v,
            p: p.to_vec(),
            windows,
            flux: vec![0.0; grid.len() * d],
            flux_avg: vec![vec![0.0; d]; scales.len()],
            grad_avg: vec![vec![0.0; d]; scales.len()],
        })
    }

    pub fn observe(&mut self, j: usize, u: &[f64]) {
        if self.windows.iter().all(|w| w.weight(j) == 0.0) {
            return;
        }
        let d = self.grid.dim();
        crate::dynamics::edge_fluxes(self.grid, self.v, &self.p, u, &mut self.flux);
        for (k, window) in self.windows.iter().enumerate() {
            let w = window.weight(j);
            if w == 0.0 {
                continue;
            }
            let scale = w / window.sites.len() as f64;
            for &x in &window.sites {
                for i in 0..d {
                    self.flux_avg[k][i] += scale * self.flux[x * d + i];
                    self.grad_avg[k][i] += scale * self.grid.grad(u, x, i);
                }
            }
        }
    }
}

/// Variance of the scale-`ell` averages across replicas.
#[derive(Debug, Clone, Serialize)]
pub struct FluxDecayRow {
    pub ell: usize,
    pub flux_variance: f64,
    pub flux_variance_se: f64,
    pub grad_variance: f64,
    pub grad_variance_se: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluxDecay {
    pub rows: Vec<FluxDecayRow>,
    /// Power-law fit of the flux variance against `ell`.
    pub flux_fit: Option<FitResult>,
    pub grad_fit: Option<FitResult>,
    pub failed: usize,
}

/// Variance tables and power-law fits from per-replica scale averages
/// (`samples[replica][scale]` holds the flux and gradient averages).
pub fn flux_decay_from_samples(scales: &[usize], samples: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)], failed: usize) -> FluxDecay {
    let rows: Vec<FluxDecayRow> = scales
        .iter()
        .enumerate()
        .map(|(k, &ell)| {
            let flux: Vec<Vec<f64>> = samples.iter().map(|s| s.0[k].clone()).collect();
            let grad: Vec<Vec<f64>> = samples.iter().map(|s| s.1[k].clone()).collect();
            let (fv, fse) = stats::trace_variance_with_jackknife(&flux);
            let (gv, gse) = stats::trace_variance_with_jackknife(&grad);
            FluxDecayRow {
                ell,
                flux_variance: fv,
                flux_variance_se: fse,
                grad_variance: gv,
                grad_variance_se: gse,
                replicas: samples.len(),
            }
        })
        .collect();
    let xs: Vec<f64> = scales.iter().map(|&e| e as f64).collect();
    let fv: Vec<f64> = rows.iter().map(|r| r.flux_variance).collect();
    let gv: Vec<f64> = rows.iter().map(|r| r.grad_variance).collect();
    FluxDecay { flux_fit: fit_power_law(&xs, &fv).ok(), grad_fit: fit_power_law(&xs, &gv).ok(), rows, failed }
}

/// Decay of the variance of flux and gradient averages over `Q_ell` for the
/// slope-`p` corrector on the torus of radius `L`, started from zero at
/// `-L^2`.
pub fn flux_decay_experiment(
    scales: &[usize],
    l: usize,
    p: &[f64],
    v: &Potential,
    replicas: usize,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<FluxDecay> {
    if scales.len() < 3 {
        return invalid("flux decay needs at least three scales");
    }
    if scales.iter().any(|&e| e == 0 || e > l) {
        return invalid("scales must lie in [1, L]");
    }
    if replicas < 3 {
        return invalid("need at least three replicas");
    }
    let d = p.len();
    let grid = TorusGrid::new(d, l)?;
    let time = TimeGrid::new(-((l * l) as f64), 0.0, opts.dt(d, v))?;
    let path = SlopePath::constant(p);
    let results = replicate(replicas, src, |s| {
        let mut acc = ScaleAverages::new(&grid, v, p, &time, scales)?;
        evolve_torus(&grid, v, &path, Some(s), vec![0.0; grid.len()], &time, &mut |j: usize, _t: f64, u: &[f64]| acc.observe(j, u))?;
        Ok((acc.flux_avg, acc.grad_avg))
    });
    let (samples, failed) = split_failures(results)?;
    Ok(flux_decay_from_samples(scales, &samples, failed))
}

/// Fluctuations of the corrector at one torus size.
#[derive(Debug, Clone, Serialize)]
pub struct FluctuationRow {
    pub l: usize,
    /// Sample variance of `phi(0, 0)` across replicas.
    pub var_center: f64,
    pub var_center_se: f64,
    /// Replica mean of `|Lambda|^-1 sum_x phi(0, x)^2`, which estimates the
    /// same variance by translation invariance.
    pub pooled: f64,
    pub pooled_se: f64,
    /// 99.9th percentile of `|grad phi(0, e)|` over edges and replicas.
    pub grad_q999: f64,
    /// Exact value of `Var phi(0)` for the quadratic potential.
    pub oracle: Option<f64>,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectorFluctuation {
    pub dim: usize,
    pub rows: Vec<FluctuationRow>,
    /// Pooled variance against `log L` (dimension 2).
    pub fit: Option<LinearFit>,
    /// Oracle variance against `log L` (quadratic, dimension 2).
    pub oracle_fit: Option<LinearFit>,
}

/// `Var phi(0)` of the explicit scheme for the quadratic corrector on the
/// torus of radius `L` after `steps` steps of size `dt` from zero.
pub fn quadratic_corrector_variance(dim: usize, l: usize, dt: f64, steps: usize) -> f64 {
    let side = 2 * l + 1;
    let total = side.pow(dim as u32);
    let mut k = vec![0i64; dim];
    let mut acc = 0.0;
    for idx in 1..total {
        let mut rem = idx;
        for axis in (0..dim).rev() {
            k[axis] = (rem % side) as i64;
            rem /= side;
        }
        let lambda = mode_eigenvalue(&k, side);
        let r = 1.0 - dt * lambda;
        let r2 = r * r;
        acc += 2.0 * dt * (1.0 - r2.powi(steps as i32)) / (1.0 - r2);
    }
    acc / total as f64
}

pub fn corrector_fluctuation_experiment(
    dim: usize,
    sizes: &[usize],
    v: &Potential,
    replicas: usize,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<CorrectorFluctuation> {
    if replicas < 3 {
        return invalid("need at least three replicas");
    }
    let mut rows = Vec::new();
    for &l in sizes {
        let grid = TorusGrid::new(dim, l)?;
        let time = TimeGrid::new(-((l * l) as f64), 0.0, opts.dt(dim, v))?;
        let zero = SlopePath::constant(&vec![0.0; dim]);
        let center = grid.site_at(&vec![0; dim]);
        let results = replicate(replicas, src, |s| {
            let phi = evolve_torus(&grid, v, &zero, Some(s), vec![0.0; grid.len()], &time, &mut |_, _, _: &[f64]| {})?;
            let pooled = phi.iter().map(|x| x * x).sum::<f64>() / phi.len() as f64;
            let grads: Vec<f64> = grid.gradient(&phi).values.iter().map(|g| g.abs()).collect();
            Ok((phi[center], pooled, grads))
        });
        let (samples, _) = split_failures(results)?;
        let centers: Vec<f64> = samples.iter().map(|s| s.0).collect();
        let (var_center, var_center_se) = stats::variance_with_jackknife(&centers);
        let pooled = MeanSe::of(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
        let mut grads: Vec<f64> = samples.iter().flat_map(|s| s.2.iter().copied()).collect();
        let grad_q999 = stats::quantile(&mut grads, 0.999);
        let oracle = v.is_quadratic().then(|| quadratic_corrector_variance(dim, l, time.dt, time.steps));
        rows.push(FluctuationRow {
            l,
            var_center,
            var_center_se,
            pooled: pooled.mean,
            pooled_se: pooled.se,
            grad_q999,
            oracle,
            replicas: samples.len(),
        });
    }
    let logs: Vec<f64> = rows.iter().map(|r| (r.l as f64).ln()).collect();
    let (fit, oracle_fit) = if dim == 2 && rows.len() >= 2 {
        let fit = linear_fit(&logs, &rows.iter().map(|r| r.pooled).collect::<Vec<_>>());
        let oracle_fit = rows
            .iter()
            .map(|r| r.oracle)
            .collect::<Option<Vec<f64>>>()
            .map(|o| linear_fit(&logs, &o));
        (Some(fit), oracle_fit)
    } else {
        (None, None)
    };
    Ok(CorrectorFluctuation { dim, rows, fit, oracle_fit })
}

fn l2_avg_norm(time: &TimeGrid, integrand: &[f64]) -> f64 {
    let steps = time.steps.max(1) as f64;
    let mut acc = 0.0;
    for (j, v) in integrand.iter().enumerate() {
        let w = if j == 0 || j == integrand.len() - 1 { 0.5 } else { 1.0 };
        acc += w * v / steps;
    }
    acc.sqrt()
}

/// Coupled comparison of the correctors at two slope paths.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// `||grad phi_1 - grad phi_2||` in the averaged `L^2(Q_L)` norm.
    pub residual: f64,
    /// `sup_t |q_1(t) - q_2(t)|` over the simulated interval.
    pub slope_distance: f64,
    pub corrector_norms: [f64; 2],
    /// `(||phi_1|| + ||phi_2||) / L`.
    pub remainder: f64,
    /// Smallest `C` with `residual <= C |q_1 - q_2| + remainder`.
    pub fitted_c: f64,
}

/// Runs both slope paths from zero at `-L^2` on shared noise.
pub fn slope_stability_check(
    q1: &SlopePath,
    q2: &SlopePath,
    l: usize,
    v: &Potential,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<StabilityReport> {
    let d = q1.dim();
    if q2.dim() != d {
        return invalid("slope paths have different dimensions");
    }
    let grid = TorusGrid::new(d, l)?;
    let time = TimeGrid::new(-((l * l) as f64), 0.0, opts.dt(d, v))?;
    let n = grid.len();
    let mut diff = Vec::with_capacity(time.slices());
    let mut norms = [Vec::with_capacity(time.slices()), Vec::with_capacity(time.slices())];
    let mut slope_distance: f64 = 0.0;
    let mut obs = |_j: usize, t: f64, u: &[Vec<f64>]| {
        let mut g2 = 0.0;
        for x in 0..n {
            for i in 0..d {
                let a = grid.grad(&u[0], x, i) - grid.grad(&u[1], x, i);
                g2 += a * a;
            }
        }
        diff.push(g2 / n as f64);
        for (k, f) in u.iter().enumerate() {
            norms[k].push(f.iter().map(|x| x * x).sum::<f64>() / n as f64);
        }
        let dq = q1.at(t).iter().zip(q2.at(t)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        slope_distance = slope_distance.max(dq);
    };
    evolve_torus_coupled(&grid, v, &[q1.clone(), q2.clone()], Some(src), vec![vec![0.0; n]; 2], &time, &mut obs)?;
    let residual = l2_avg_norm(&time, &diff);
    let corrector_norms = [l2_avg_norm(&time, &norms[0]), l2_avg_norm(&time, &norms[1])];
    let remainder = (corrector_norms[0] + corrector_norms[1]) / l as f64;
    let fitted_c = if slope_distance > 0.0 { ((residual - remainder) / slope_distance).max(0.0) } else { 0.0 };
    Ok(StabilityReport { residual, slope_distance, corrector_norms, remainder, fitted_c })
}

/// Residual of the first-order linearization at one distance.
#[derive(Debug, Clone, Serialize)]
pub struct ModulusPoint {
    pub q: Vec<f64>,
    pub distance: f64,
    pub residual: f64,
    pub residual_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusEstimate {
    pub p: Vec<f64>,
    pub points: Vec<ModulusPoint>,
    pub replicas: usize,
}

/// One replica of `||grad phi(q) - grad phi(p) - grad w_{p, q - p}||` in the
/// averaged `L^2(Q_L)` norm for every `q`, all driven by the same noise.
pub fn linearization_sample(
    p: &[f64],
    qs: &[Vec<f64>],
    l: usize,
    v: &Potential,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<Vec<f64>> {
    let d = p.len();
    let grid = TorusGrid::new(d, l)?;
    let time = TimeGrid::new(-((l * l) as f64), 0.0, opts.dt(d, v))?;
    let n = grid.len();
    let mut slopes = vec![SlopePath::constant(p)];
    slopes.extend(qs.iter().map(|q| SlopePath::constant(q)));
    let mut lins: Vec<LinearizedCorrector> = qs
        .iter()
        .map(|q| {
            let xi: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
            LinearizedCorrector::new(&grid, v, p, &xi, time.dt)
        })
        .collect::<Result<_>>()?;
    let mut integrands = vec![Vec::with_capacity(time.slices()); qs.len()];
    let mut obs = |j: usize, _t: f64, u: &[Vec<f64>]| {
        for (k, lin) in lins.iter_mut().enumerate() {
            let mut acc = 0.0;
            for x in 0..n {
                for i in 0..d {
                    let r = grid.grad(&u[k + 1], x, i) - grid.grad(&u[0], x, i) - grid.grad(&lin.w, x, i);
                    acc += r * r;
                }
            }
            integrands[k].push(acc / n as f64);
            if j < time.steps {
                lin.advance(&grid, v, &u[0]);
            }
        }
    };
    evolve_torus_coupled(&grid, v, &slopes, Some(src), vec![vec![0.0; n]; slopes.len()], &time, &mut obs)?;
    Ok(integrands.iter().map(|f| l2_avg_norm(&time, f)).collect())
}

pub fn linearization_modulus(
    p: &[f64],
    qs: &[Vec<f64>],
    l: usize,
    v: &Potential,
    replicas: usize,
    src: &NoiseSource,
    opts: &EstimatorOptions,
) -> Result<ModulusEstimate> {
    if qs.iter().any(|q| q.len() != p.len()) {
        return invalid("slopes have different dimensions");
    }
    let results = replicate(replicas, src, |s| linearization_sample(p, qs, l, v, s, opts));
    let (samples, _) = split_failures(results)?;
    let points = qs
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let xs: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let m = MeanSe::of(&xs);
            ModulusPoint {
                q: q.clone(),
                distance: q.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
                residual: m.mean,
                residual_se: m.se,
            }
        })
        .collect();
    Ok(ModulusEstimate { p: p.to_vec(), points, replicas: samples.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parabolic::{solve_linear_parabolic, Environment};
    use crate::lattice::SpaceTimeField;

    fn opts() -> EstimatorOptions {
        EstimatorOptions::default()
    }

    #[test]
    fn tau_quadratic_is_the_slope() {
        let src = NoiseSource::new(11, 0);
        let est = estimate_tau(&TauSlope::Constant(vec![0.7, -0.2]), 4, &Potential::quadratic(), 40, &src, &opts()).unwrap();
        for i in 0..2 {
            assert!((est.mean[i] - [0.7, -0.2][i]).abs() <= 3.0 * est.se[i] + 1e-12);
        }
        assert_eq!(est.replicas, 40);
    }

    #[test]
    fn tau_symmetric_potential_at_zero_slope() {
        let src = NoiseSource::new(12, 0);
        let v = Potential::soft_quartic(0.5).unwrap();
        let est = estimate_tau(&TauSlope::Constant(vec![0.0, 0.0]), 4, &v, 24, &src, &opts()).unwrap();
        for i in 0..2 {
            assert!(est.mean[i].abs() <= 3.0 * est.se[i]);
        }
    }

    #[test]
    fn constant_slope_path_matches_constant_estimator() {
        let src = NoiseSource::new(13, 3);
        let v = Potential::soft_quartic(0.5).unwrap();
        let l = 4;
        let a = tau_sample(l, &TauSlope::Constant(vec![0.4, 0.1]), &v, &src, &opts()).unwrap();
        let path = SlopePath::new(vec![(-20.0, vec![0.4, 0.1])]).unwrap();
        let b = tau_sample(l, &TauSlope::Path(path), &v, &src, &opts()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn hessian_of_quadratic_is_identity() {
        let src = NoiseSource::new(14, 0);
        let h = estimate_hessian(&[0.3, 0.0], 4, &Potential::quadratic(), 4, &src, &opts()).unwrap();
        for (i, row) in h.matrix.iter().enumerate() {
            for (j, &m) in row.iter().enumerate() {
                assert!((m - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12, "{:?}", h.matrix);
            }
        }
        assert!(h.positive_definite);
    }

    #[test]
    fn hessian_soft_quartic_is_bounded_and_symmetric_in_slope() {
        let src = NoiseSource::new(15, 0);
        let v = Potential::soft_quartic(0.5).unwrap();
        let h0 = estimate_hessian(&[0.0, 0.0], 4, &v, 12, &src, &opts()).unwrap();
        for j in 0..2 {
            assert!(h0.matrix[j][j] >= v.c_minus() - 0.1 && h0.matrix[j][j] <= v.c_plus() + 0.1);
        }
        assert!(h0.matrix[0][1].abs() <= 4.0 * h0.se[0][1] + 1e-3);
        let hp = estimate_hessian(&[0.5, 0.0], 4, &v, 12, &src, &opts()).unwrap();
        let hm = estimate_hessian(&[-0.5, 0.0], 4, &v, 12, &NoiseSource::new(16, 0), &opts()).unwrap();
        for j in 0..2 {
            let se = (hp.se[j][j].powi(2) + hm.se[j][j].powi(2)).sqrt();
            assert!((hp.matrix[j][j] - hm.matrix[j][j]).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn constant_field_has_no_fluctuation() {
        let g = TorusGrid::new(2, 4).unwrap();
        let v = Potential::soft_quartic(0.5).unwrap();
        let time = TimeGrid::new(-16.0, 0.0, 1.0 / 24.0).unwrap();
        let samples: Vec<_> = (0..5)
            .map(|_| {
                let mut acc = ScaleAverages::new(&g, &v, &[0.2, 0.0], &time, &[1, 2, 4]).unwrap();
                let u = vec![1.5; g.len()];
                for j in 0..time.slices() {
                    acc.observe(j, &u);
                }
                (acc.flux_avg, acc.grad_avg)
            })
            .collect();
        let decay = flux_decay_from_samples(&[1, 2, 4], &samples, 0);
        assert!(decay.rows.iter().all(|r| r.flux_variance == 0.0 && r.grad_variance == 0.0));
        assert!((samples[0].0[0][0] - v.dv(0.2)).abs() < 1e-14);
    }

    #[test]
    fn flux_decay_small_run() {
        let src = NoiseSource::new(17, 0);
        let v = Potential::soft_quartic(0.5).unwrap();
        let decay = flux_decay_experiment(&[1, 2, 4], 4, &[0.0, 0.0], &v, 12, &src, &opts()).unwrap();
        assert_eq!(decay.rows.len(), 3);
        assert!(decay.rows.windows(2).all(|w| w[1].flux_variance < w[0].flux_variance));
        assert!(flux_decay_experiment(&[1, 2], 4, &[0.0, 0.0], &v, 12, &src, &opts()).is_err());
    }

    #[test]
    fn quadratic_variance_oracle_matches_continuous_limit() {
        let l = 3;
        let steps = 100_000;
        let dt = 1e-3;
        let discrete = quadratic_corrector_variance(2, l, dt, steps);
        let side = 7i64;
        let mut cont = 0.0;
        for a in 0..side {
            for b in 0..side {
                if a == 0 && b == 0 {
                    continue;
                }
                let lam = mode_eigenvalue(&[a, b], 7);
                cont += (1.0 - (-2.0 * lam * dt * steps as f64).exp()) / lam;
            }
        }
        cont /= 49.0;
        assert!((discrete - cont).abs() < 1e-2 * cont);
        let mut exact = 0.0;
        for a in 0..side {
            for b in 0..side {
                if a == 0 && b == 0 {
                    continue;
                }
                let r = 1.0 - dt * mode_eigenvalue(&[a, b], 7);
                let mut var = 0.0;
                for _ in 0..steps {
                    var = r * r * var + 2.0 * dt;
                }
                exact += var;
            }
        }
        exact /= 49.0;
        assert!((discrete - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn fluctuation_matches_oracle_on_small_torus() {
        let src = NoiseSource::new(18, 0);
        let r = corrector_fluctuation_experiment(2, &[3], &Potential::quadratic(), 200, &src, &opts()).unwrap();
        let row = &r.rows[0];
        let oracle = row.oracle.unwrap();
        assert!((row.pooled - oracle).abs() <= 4.0 * row.pooled_se, "{} vs {oracle}", row.pooled);
        assert!((row.var_center - oracle).abs() <= 4.0 * row.var_center_se);
    }

    #[test]
    fn stability_identical_paths_and_quadratic_oracle() {
        let src = NoiseSource::new(19, 0);
        let v = Potential::soft_quartic(0.5).unwrap();
        let q = SlopePath::constant(&[0.3, 0.2]);
        let r = slope_stability_check(&q, &q, 3, &v, &src, &opts()).unwrap();
        assert_eq!(r.residual, 0.0);
        let q1 = SlopePath::new(vec![(-9.0, vec![0.3, 0.2]), (-4.0, vec![-0.5, 0.1])]).unwrap();
        let q2 = SlopePath::constant(&[0.0, 0.4]);
        let quad = Potential::quadratic();
        let r = slope_stability_check(&q1, &q2, 3, &quad, &src, &opts()).unwrap();
        // The difference solves the heat equation forced by div(q1 - q2) = 0.
        let grid = TorusGrid::new(2, 3).unwrap();
        let time = TimeGrid::new(-9.0, 0.0, default_dt(2, 1.0)).unwrap();
        let forcing: Vec<Vec<f64>> = (0..time.slices())
            .map(|j| {
                let t = time.time(j);
                let dq: Vec<f64> = q1.at(t).iter().zip(q2.at(t)).map(|(a, b)| a - b).collect();
                crate::lattice::EdgeField::constant(2, grid.len(), &dq).values
            })
            .collect();
        let f = SpaceTimeField::from_slices(time.s_minus, time.dt, forcing);
        let mut worst: f64 = 0.0;
        solve_linear_parabolic(&grid, &Environment::Constant(1.0), Some(&f), &vec![0.0; grid.len()], &time, &mut |_, _, w: &[f64]| {
            worst = worst.max(grid.gradient(w).values.iter().fold(0.0, |m, x| m.max(x.abs())));
        })
        .unwrap();
        assert!((r.residual - worst).abs() < 1e-10, "{} vs {worst}", r.residual);
    }

    #[test]
    fn linearization_quadratic_and_equal_slopes() {
        let src = NoiseSource::new(20, 0);
        let r = linearization_sample(&[0.2, 0.0], &[vec![0.5, 0.1], vec![0.2, 0.0]], 3, &Potential::quadratic(), &src, &opts()).unwrap();
        assert!(r.iter().all(|&x| x <= 1e-10));
        let v = Potential::kinked(0.5).unwrap();
        let r = linearization_sample(&[0.2, 0.0], &[vec![0.2, 0.0]], 3, &v, &src, &opts()).unwrap();
        assert_eq!(r[0], 0.0);
    }
}
