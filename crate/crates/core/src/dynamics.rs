//! Euler–Maruyama integrators for the Langevin dynamics.
//!
//! All torus dynamics keep the field spatially mean-zero: the increment of
//! every step (drift plus noise) is projected onto mean-zero fields, which
//! is the mean-subtracted noise of the periodic corrector.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{DirichletDomain, EdgeField, SiteKind, SpaceTimeField, TorusGrid};
use crate::noise::{project_mean_zero, site_key, IncrementCache, NoiseSource, Stream};
use crate::potential::Potential;
use crate::quadrature::gauss_legendre_on;

/// The explicit-scheme step `1 / (8 d c_plus)`.
pub fn default_dt(dim: usize, c_plus: f64) -> f64 {
    1.0 / (8.0 * dim as f64 * c_plus)
}

pub fn check_dt(dt: f64, dim: usize, c_plus: f64) -> Result<()> {
    let max = default_dt(dim, c_plus);
    if !(dt > 0.0) || dt > max * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt, max });
    }
    Ok(())
}

/// Uniform time grid over `[s_minus, s_plus]` with `steps` steps of size
/// `dt`; step `n` reads Brownian increment number `first_step + n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub s_minus: f64,
    pub s_plus: f64,
    pub dt: f64,
    pub steps: usize,
    pub first_step: i64,
}

impl TimeGrid {
    /// `ceil(|I| / dt)` steps of size `|I| / steps`.
    pub fn new(s_minus: f64, s_plus: f64, dt: f64) -> Result<Self> {
        if !(s_plus >= s_minus) {
            return Err(Error::TimeRange(format!("s_plus = {s_plus} precedes s_minus = {s_minus}")));
        }
        if !(dt > 0.0) {
            return invalid("time step must be positive");
        }
        let span = s_plus - s_minus;
        let steps = ((span / dt) - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { dt } else { span / steps as f64 };
        Ok(Self { s_minus, s_plus, dt, steps, first_step: (s_minus / dt).round() as i64 })
    }

    pub fn time(&self, n: usize) -> f64 {
        self.s_minus + n as f64 * self.dt
    }

    pub fn slices(&self) -> usize {
        self.steps + 1
    }
}

/// Piecewise-constant slope: `slopes[i]` on `[starts[i], starts[i+1])`,
/// the last piece extending indefinitely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePath {
    starts: Vec<f64>,
    slopes: Vec<Vec<f64>>,
}

impl SlopePath {
    pub fn constant(p: &[f64]) -> Self {
        Self { starts: vec![f64::NEG_INFINITY], slopes: vec![p.to_vec()] }
    }

    pub fn new(pieces: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if pieces.is_empty() {
            return invalid("slope path needs at least one piece");
        }
        let dim = pieces[0].1.len();
        for w in pieces.windows(2) {
            if !(w[1].0 > w[0].0) {
                return invalid("slope breakpoints must be strictly increasing");
            }
        }
        if pieces.iter().any(|(_, q)| q.len() != dim) {
            return invalid("slope vectors must share one dimension");
        }
        let (starts, slopes) = pieces.into_iter().unzip();
        Ok(Self { starts, slopes })
    }

    pub fn dim(&self) -> usize {
        self.slopes[0].len()
    }

    pub fn start(&self) -> f64 {
        self.starts[0]
    }

    pub fn is_constant(&self) -> bool {
        self.slopes.windows(2).all(|w| w[0] == w[1])
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.starts.iter().copied().zip(self.slopes.iter().map(Vec::as_slice))
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let i = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        &self.slopes[i]
    }

    fn covers(&self, s_minus: f64) -> Result<()> {
        if self.starts[0] > s_minus {
            return Err(Error::TimeRange(format!(
                "slope path starts at {} after the dynamic starts at {s_minus}",
                self.starts[0]
            )));
        }
        Ok(())
    }
}

/// Observer of a trajectory: receives the slice index, its time, and the
/// field, for the initial slice and after every step.
pub trait Observer {
    fn observe(&mut self, j: usize, t: f64, u: &[f64]);
}

impl<F: FnMut(usize, f64, &[f64])> Observer for F {
    fn observe(&mut self, j: usize, t: f64, u: &[f64]) {
        self(j, t, u)
    }
}

/// Stores every `stride`-th slice.
pub struct Recorder {
    pub field: SpaceTimeField,
    stride: usize,
    steps: usize,
}

impl Recorder {
    pub fn new(time: &TimeGrid, width: usize, stride: usize) -> Self {
        let stride = stride.max(1);
        let slices = time.steps / stride + 1;
        Self {
            field: SpaceTimeField::with_capacity(time.s_minus, time.dt * stride as f64, width, slices),
            stride,
            steps: time.steps,
        }
    }
}

impl Observer for Recorder {
    fn observe(&mut self, j: usize, _t: f64, u: &[f64]) {
        if j % self.stride == 0 && (j / self.stride) * self.stride <= self.steps {
            self.field.push_slice(u);
        }
    }
}

/// Pair of observers fed the same slices.
pub struct Both<'a, A: Observer + ?Sized, B: Observer + ?Sized>(pub &'a mut A, pub &'a mut B);

impl<A: Observer + ?Sized, B: Observer + ?Sized> Observer for Both<'_, A, B> {
    fn observe(&mut self, j: usize, t: f64, u: &[f64]) {
        self.0.observe(j, t, u);
        self.1.observe(j, t, u);
    }
}

/// Canonical-edge fluxes `V'(q_i + grad_i u(x))`.
pub fn edge_fluxes(grid: &TorusGrid, v: &Potential, q: &[f64], u: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    if v.is_quadratic() {
        for x in 0..grid.len() {
            for i in 0..d {
                out[x * d + i] = q[i] + u[grid.plus(x, i)] - u[x];
            }
        }
    } else {
        for x in 0..grid.len() {
            for i in 0..d {
                out[x * d + i] = v.dv(q[i] + u[grid.plus(x, i)] - u[x]);
            }
        }
    }
}

/// Advances a mean-zero torus field from `time.s_minus` to `time.s_plus`
/// under `du = div V'(q(t) + grad u) dt + sqrt(2) dB`, with the increments
/// projected to mean zero. `noise = None` drops the stochastic term.
pub fn evolve_torus(
    grid: &TorusGrid,
    v: &Potential,
    slope: &SlopePath,
    noise: Option<&NoiseSource>,
    init: Vec<f64>,
    time: &TimeGrid,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    let mut fields = evolve_torus_coupled(
        grid,
        v,
        std::slice::from_ref(slope),
        noise,
        vec![init],
        time,
        &mut |j: usize, t: f64, u: &[Vec<f64>]| observer.observe(j, t, &u[0]),
    )?;
    Ok(fields.pop().unwrap())
}

/// Several torus fields driven by the same Brownian increments, one slope
/// path per field. The observer receives all fields after every step.
pub fn evolve_torus_coupled(
    grid: &TorusGrid,
    v: &Potential,
    slopes: &[SlopePath],
    noise: Option<&NoiseSource>,
    inits: Vec<Vec<f64>>,
    time: &TimeGrid,
    observer: &mut dyn FnMut(usize, f64, &[Vec<f64>]),
) -> Result<Vec<Vec<f64>>> {
    check_dt(time.dt, grid.dim(), v.c_plus())?;
    if slopes.len() != inits.len() || slopes.is_empty() {
        return invalid("need one slope path per coupled field");
    }
    for (slope, init) in slopes.iter().zip(&inits) {
        slope.covers(time.s_minus)?;
        if slope.dim() != grid.dim() || init.len() != grid.len() {
            return invalid("slope or initial field does not match the grid");
        }
    }
    let n = grid.len();
    let d = grid.dim();
    let keys = grid.site_keys();
    let mut fields = inits;
    let mut flux = vec![0.0; n * d];
    let mut inc = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut cache = IncrementCache::new(n);
    let noise_scale = (2.0 * time.dt).sqrt();
    observer(0, time.s_minus, &fields);
    for step in 0..time.steps {
        let t = time.time(step);
        let k = time.first_step + step as i64;
        if let Some(src) = noise {
            for (slot, val) in z.iter_mut().zip(cache.step(src, keys, k)) {
                *slot = noise_scale * val;
            }
        }
        for (u, slope) in fields.iter_mut().zip(slopes) {
            edge_fluxes(grid, v, slope.at(t), u, &mut flux);
            for (x, slot) in inc.iter_mut().enumerate() {
                let mut div = 0.0;
                for i in 0..d {
                    div += flux[x * d + i] - flux[grid.minus(x, i) * d + i];
                }
                *slot = time.dt * div;
            }
            if noise.is_some() {
                for (slot, zx) in inc.iter_mut().zip(&z) {
                    *slot += zx;
                }
            }
            let sum: f64 = inc.iter().sum();
            project_mean_zero(&mut inc, sum);
            for (a, b) in u.iter_mut().zip(&inc) {
                *a += b;
            }
        }
        observer(step + 1, time.time(step + 1), &fields);
    }
    Ok(fields)
}

/// The first-order corrector: the slope-`q` dynamic on the torus started
/// from zero at `s_minus`, returned with every `stride`-th slice.
pub fn run_corrector(
    grid: &TorusGrid,
    time: &TimeGrid,
    slope: &SlopePath,
    v: &Potential,
    src: &NoiseSource,
    stride: usize,
) -> Result<SpaceTimeField> {
    let mut rec = Recorder::new(time, grid.len(), stride);
    evolve_torus(grid, v, slope, Some(src), vec![0.0; grid.len()], time, &mut rec)?;
    Ok(rec.field)
}

/// Streaming form of [`run_corrector`].
pub fn run_corrector_observed(
    grid: &TorusGrid,
    time: &TimeGrid,
    slope: &SlopePath,
    v: &Potential,
    src: &NoiseSource,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    evolve_torus(grid, v, slope, Some(src), vec![0.0; grid.len()], time, observer)
}

/// Mean-zero Gaussian free field on the torus by spectral synthesis:
/// `phi = sum_{k != 0} X_k e_k / sqrt(lambda_k)` with `X_{-k} = conj(X_k)`.
/// Different `sample` ids give independent fields for one replica.
pub fn sample_gff(grid: &TorusGrid, src: &NoiseSource, sample: u32) -> Vec<f64> {
    let n = grid.side();
    let d = grid.dim();
    let total = grid.len();
    let volume = total as f64;
    let mut coeffs = vec![Complex::new(0.0, 0.0); total];
    let mut k = vec![0i64; d];
    let mut neg = vec![0i64; d];
    for idx in 0..total {
        let mut rem = idx;
        for axis in (0..d).rev() {
            k[axis] = (rem % n) as i64;
            rem /= n;
        }
        let mut neg_idx = 0usize;
        for axis in 0..d {
            neg[axis] = (n as i64 - k[axis]) % n as i64;
            neg_idx = neg_idx * n + neg[axis] as usize;
        }
        if idx == 0 || neg_idx < idx {
            continue;
        }
        let lambda = mode_eigenvalue(&k, n);
        let key = site_key(&k);
        let a = src.normal(Stream::FreeField, key, 2 * sample as u64);
        let b = src.normal(Stream::FreeField, key, 2 * sample as u64 + 1);
        let scale = 1.0 / (2.0 * lambda * volume).sqrt();
        coeffs[idx] = Complex::new(a * scale, b * scale);
        coeffs[neg_idx] = Complex::new(a * scale, -b * scale);
    }
    inverse_dft_nd(&mut coeffs, n, d);
    coeffs.iter().map(|c| c.re).collect()
}

/// Eigenvalue `sum_i (2 - 2 cos(2 pi k_i / n))` of the torus Laplacian.
pub fn mode_eigenvalue(k: &[i64], n: usize) -> f64 {
    k.iter()
        .map(|&ki| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * ki as f64 / n as f64).cos())
        .sum()
}

/// Unnormalized inverse DFT `sum_k c_k exp(2 pi i k.x / n)` along every axis.
pub(crate) fn inverse_dft_nd(data: &mut [Complex<f64>], n: usize, d: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    transform_axes(data, n, d, &*fft);
}

/// Unnormalized forward DFT `sum_x u_x exp(-2 pi i k.x / n)`.
#[cfg(test)]
pub(crate) fn forward_dft_nd(data: &mut [Complex<f64>], n: usize, d: usize) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    transform_axes(data, n, d, &*fft);
}

fn transform_axes(data: &mut [Complex<f64>], n: usize, d: usize, fft: &dyn rustfft::Fft<f64>) {
    let total = data.len();
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for start in 0..total {
            if (start / stride) % n != 0 {
                continue;
            }
            for (m, l) in line.iter_mut().enumerate() {
                *l = data[start + m * stride];
            }
            fft.process(&mut line);
            for (m, l) in line.iter().enumerate() {
                data[start + m * stride] = *l;
            }
        }
    }
}

/// The Gaussian free field dynamic `dpsi = Lap psi dt + sqrt(2) dB` started
/// from an exact free-field sample.
pub fn run_gff_dynamic(
    grid: &TorusGrid,
    time: &TimeGrid,
    src: &NoiseSource,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    let init = sample_gff(grid, src, 0);
    let zero = SlopePath::constant(&vec![0.0; grid.dim()]);
    evolve_torus(grid, &Potential::quadratic(), &zero, Some(src), init, time, observer)
}

/// How the stationary dynamic is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StationaryStart {
    /// Exact free-field sample (quadratic potential only).
    FreeField,
    /// Zero field evolved for the given burn-in duration before `s_minus`.
    BurnIn(f64),
}

impl StationaryStart {
    /// Exact sampling for quadratic potentials, burn-in `L^2` otherwise.
    pub fn default_for(v: &Potential, grid: &TorusGrid) -> Self {
        if v.is_quadratic() {
            Self::FreeField
        } else {
            Self::BurnIn((grid.radius() * grid.radius()) as f64)
        }
    }
}

/// The slope-`p` dynamic observed on `time` after reaching stationarity.
pub fn run_stationary_periodic(
    grid: &TorusGrid,
    p: &[f64],
    v: &Potential,
    src: &NoiseSource,
    start: StationaryStart,
    time: &TimeGrid,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    let slope = SlopePath::constant(p);
    match start {
        StationaryStart::FreeField => {
            if !v.is_quadratic() {
                return invalid("exact free-field initialization requires the quadratic potential");
            }
            let init = sample_gff(grid, src, 0);
            evolve_torus(grid, v, &slope, Some(src), init, time, observer)
        }
        StationaryStart::BurnIn(burn) => {
            let l2 = (grid.radius() * grid.radius()) as f64;
            if burn < l2 {
                return invalid(format!("burn-in {burn} shorter than L^2 = {l2}"));
            }
            let steps = (burn / time.dt).round() as usize;
            let burn_grid = TimeGrid {
                s_minus: time.s_minus - steps as f64 * time.dt,
                s_plus: time.s_minus,
                dt: time.dt,
                steps,
                first_step: time.first_step - steps as i64,
            };
            let init = evolve_torus(grid, v, &slope, Some(src), vec![0.0; grid.len()], &burn_grid, &mut |_, _, _: &[f64]| {})?;
            evolve_torus(grid, v, &slope, Some(src), init, time, observer)
        }
    }
}

/// `a(e) = int_0^1 V''(s grad v(e) + (1 - s) grad u(e)) ds` on every
/// canonical edge (8-point Gauss–Legendre), clamped to `[c_minus, c_plus]`.
/// The slopes are added to the respective gradients.
pub fn difference_coefficients(
    grid: &TorusGrid,
    u: &[f64],
    qu: &[f64],
    w: &[f64],
    qw: &[f64],
    v: &Potential,
) -> EdgeField {
    let d = grid.dim();
    let mut out = EdgeField::zeros(d, grid.len());
    if v.is_quadratic() {
        out.values.iter_mut().for_each(|a| *a = 1.0);
        return out;
    }
    let (nodes, weights) = gauss_legendre_on(8, 0.0, 1.0);
    for x in 0..grid.len() {
        for i in 0..d {
            let gu = qu[i] + grid.grad(u, x, i);
            let gw = qw[i] + grid.grad(w, x, i);
            let a: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&s, &wt)| wt * v.ddv(s * gw + (1.0 - s) * gu))
                .sum();
            out.set(x, i, a.clamp(v.c_minus(), v.c_plus()));
        }
    }
    out
}

/// Slice-by-slice [`difference_coefficients`] of two trajectories on the
/// same time grid; the result has width `|Lambda| d`.
pub fn difference_environment(
    grid: &TorusGrid,
    u: &SpaceTimeField,
    w: &SpaceTimeField,
    v: &Potential,
) -> Result<SpaceTimeField> {
    if u.n_slices() != w.n_slices() || u.dt() != w.dt() || u.t0() != w.t0() {
        return Err(Error::TimeRange("trajectories live on different time grids".into()));
    }
    let zero = vec![0.0; grid.dim()];
    let mut out = SpaceTimeField::with_capacity(u.t0(), u.dt(), grid.len() * grid.dim(), u.n_slices());
    for j in 0..u.n_slices() {
        out.push_slice(&difference_coefficients(grid, u.slice(j), &zero, w.slice(j), &zero, v).values);
    }
    Ok(out)
}

/// Continuum boundary datum `f(t, x)` for the Dirichlet dynamic.
pub trait BoundaryData: Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
}

impl<F: Fn(f64, &[f64]) -> f64 + Sync> BoundaryData for F {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self(t, x)
    }
}

/// The Dirichlet dynamic at mesh `eps` on macroscopic times `[t0, t1]`,
/// integrated in microscopic units: `U = u / eps` follows the unit-lattice
/// Langevin dynamic on times `s = t / eps^2` with step `dt_micro`, and the
/// boundary is pinned to the cell averages of `f` (divided by `eps`). The
/// observer receives macroscopic times and values `u = eps U`.
#[allow(clippy::too_many_arguments)]
pub fn run_dirichlet(
    dom: &DirichletDomain,
    f: &dyn BoundaryData,
    v: &Potential,
    noise: Option<&NoiseSource>,
    t0: f64,
    t1: f64,
    dt_micro: f64,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    let eps = dom.eps();
    let d = dom.dim();
    check_dt(dt_micro, d, v.c_plus())?;
    let micro = TimeGrid::new(t0 / (eps * eps), t1 / (eps * eps), dt_micro)?;
    let macro_of = |s: f64| s * eps * eps;
    let len = dom.len();
    let interior = dom.interior();
    let boundary = dom.boundary();
    let keys = dom.site_keys();
    let smoothed = |i: usize, t: f64| dom.cell_average(i, |y| f.value(t, y));

    let mut u = vec![0.0; len];
    for i in 0..len {
        if dom.kind(i) != SiteKind::Unused {
            u[i] = smoothed(i, t0) / eps;
        }
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::MissingBoundaryData("boundary datum is not finite at the initial time".into()));
    }
    let strides: Vec<usize> = (0..d).map(|a| dom.stride(a)).collect();
    let mut macro_buf: Vec<f64> = u.iter().map(|x| x * eps).collect();
    observer.observe(0, t0, &macro_buf);
    let mut next = u.clone();
    let noise_scale = (2.0 * micro.dt).sqrt();
    let interior_keys: Vec<u64> = interior.iter().map(|&x| keys[x]).collect();
    let mut cache = IncrementCache::new(interior.len());
    let mut z = vec![0.0; interior.len()];
    for step in 0..micro.steps {
        let k = micro.first_step + step as i64;
        if let Some(src) = noise {
            for (slot, val) in z.iter_mut().zip(cache.step(src, &interior_keys, k)) {
                *slot = noise_scale * val;
            }
        }
        for (&x, &zx) in interior.iter().zip(&z) {
            let ux = u[x];
            let mut div = 0.0;
            for &s in &strides {
                div += v.dv(u[x + s] - ux) + v.dv(u[x - s] - ux);
            }
            next[x] = ux + micro.dt * div + zx;
        }
        let t_next = macro_of(micro.time(step + 1));
        for &b in boundary {
            let val = smoothed(b, t_next) / eps;
            if !val.is_finite() {
                return Err(Error::MissingBoundaryData(format!("boundary datum undefined at t = {t_next}")));
            }
            next[b] = val;
        }
        std::mem::swap(&mut u, &mut next);
        for (m, &x) in macro_buf.iter_mut().zip(&u) {
            *m = x * eps;
        }
        observer.observe(step + 1, t_next, &macro_buf);
    }
    Ok(macro_buf)
}
