//! Deterministic explicit solvers for linear and nonlinear discrete
//! parabolic equations.

use serde::Serialize;

use crate::dynamics::{BoundaryData, Observer, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::lattice::{DirichletDomain, EdgeField, SiteKind, SpaceTimeField, TorusGrid};
use crate::potential::Potential;

/// Coefficient field `a(t, e)` on the canonical edges of a torus.
#[derive(Debug, Clone)]
pub enum Environment {
    Constant(f64),
    /// Time-independent coefficients.
    Static(EdgeField),
    /// One edge field per slice of a uniform time grid (width `|Lambda| d`).
    Tabulated(SpaceTimeField),
}

impl Environment {
    /// Largest coefficient, used for the stability bound.
    pub fn upper(&self) -> f64 {
        match self {
            Self::Constant(a) => *a,
            Self::Static(e) => e.values.iter().copied().fold(f64::MIN, f64::max),
            Self::Tabulated(f) => f.data().iter().copied().fold(f64::MIN, f64::max),
        }
    }

    pub fn lower(&self) -> f64 {
        match self {
            Self::Constant(a) => *a,
            Self::Static(e) => e.values.iter().copied().fold(f64::MAX, f64::min),
            Self::Tabulated(f) => f.data().iter().copied().fold(f64::MAX, f64::min),
        }
    }

    /// Whether `a(t + h, .) = a(t, .)` for all shifts.
    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, Self::Tabulated(_))
    }

    fn coefficients_at(&self, t: f64) -> Result<Coefficients<'_>> {
        Ok(match self {
            Self::Constant(a) => Coefficients::Constant(*a),
            Self::Static(e) => Coefficients::Edges(&e.values),
            Self::Tabulated(f) => Coefficients::Edges(f.at(t)?),
        })
    }

    fn check(&self, grid: &TorusGrid, dt: f64) -> Result<()> {
        let width = grid.len() * grid.dim();
        match self {
            Self::Static(e) if e.values.len() != width => return invalid("environment does not match the grid"),
            Self::Tabulated(f) if f.width() != width => return invalid("environment does not match the grid"),
            _ => {}
        }
        let lower = self.lower();
        if !(lower > 0.0) {
            return invalid(format!("environment is not uniformly elliptic (min {lower})"));
        }
        let max = 1.0 / (8.0 * grid.dim() as f64 * self.upper());
        if dt > max * (1.0 + 1e-12) {
            return Err(Error::UnstableTimeStep { dt, max });
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Coefficients<'a> {
    Constant(f64),
    Edges(&'a [f64]),
}

impl Coefficients<'_> {
    #[inline]
    fn get(&self, idx: usize) -> f64 {
        match self {
            Self::Constant(a) => *a,
            Self::Edges(e) => e[idx],
        }
    }
}

/// `out = div(a grad u) + div F` on the torus.
fn apply_operator(grid: &TorusGrid, a: Coefficients<'_>, u: &[f64], forcing: Option<&[f64]>, out: &mut [f64]) {
    let d = grid.dim();
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..d {
            let up = grid.plus(x, i);
            let down = grid.minus(x, i);
            acc += a.get(x * d + i) * (u[up] - u[x]) - a.get(down * d + i) * (u[x] - u[down]);
            if let Some(f) = forcing {
                acc += f[x * d + i] - f[down * d + i];
            }
        }
        *o = acc;
    }
}

/// The periodic heat kernel `P_a(t, .; s, y)` on the time grid `s + n dt`.
#[derive(Debug, Clone)]
pub struct HeatKernelTable {
    pub source_time: f64,
    pub source_site: usize,
    pub field: SpaceTimeField,
}

impl HeatKernelTable {
    /// `P_a(t, .)`, identically zero before the source time.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        if t < self.source_time - 1e-12 {
            return Ok(vec![0.0; self.field.width()]);
        }
        Ok(self.field.at(t)?.to_vec())
    }
}

/// Explicit time stepping of `d_t P = div(a grad P)` from `delta_y - 1/|Lambda|`.
pub fn heat_kernel(
    grid: &TorusGrid,
    env: &Environment,
    s: f64,
    y: usize,
    t_end: f64,
    dt: f64,
) -> Result<HeatKernelTable> {
    let time = TimeGrid::new(s, t_end, dt)?;
    env.check(grid, time.dt)?;
    if y >= grid.len() {
        return Err(Error::OutsideDomain(format!("source site {y}")));
    }
    let n = grid.len();
    let mut p = vec![-1.0 / n as f64; n];
    p[y] += 1.0;
    let mut field = SpaceTimeField::with_capacity(s, time.dt, n, time.slices());
    field.push_slice(&p);
    let mut lap = vec![0.0; n];
    for step in 0..time.steps {
        apply_operator(grid, env.coefficients_at(time.time(step))?, &p, None, &mut lap);
        for (a, b) in p.iter_mut().zip(&lap) {
            *a += time.dt * b;
        }
        field.push_slice(&p);
    }
    Ok(HeatKernelTable { source_time: s, source_site: y, field })
}

/// `u(t_n) = sum_{m < n} dt sum_y P_a(t_n, .; t_{m+1}, y) f(t_m, y)`: the
/// solution of `d_t u - div(a grad u) = f`, `u(t_0) = 0`, assembled from heat
/// kernels. The forcing is read on its own time grid, which is also the
/// solver grid.
pub fn duhamel_solve(grid: &TorusGrid, env: &Environment, f: &SpaceTimeField) -> Result<SpaceTimeField> {
    let n = grid.len();
    if f.width() != n {
        return invalid("forcing does not match the grid");
    }
    let slices = f.n_slices();
    let scale = f.data().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    for j in 0..slices {
        let mass: f64 = f.slice(j).iter().sum();
        if mass.abs() > 1e-10 * scale * n as f64 {
            return Err(Error::NonzeroForcingMass(mass));
        }
    }
    let dt = f.dt();
    let t0 = f.t0();
    let mut out = SpaceTimeField::zeros(t0, dt, n, slices);
    if slices < 2 {
        return Ok(out);
    }
    let t_end = f.t_end();
    if env.is_time_invariant() {
        // P(t; s, y) depends on t - s only: one kernel per source site.
        for y in 0..n {
            let kernel = heat_kernel(grid, env, 0.0, y, t_end - t0, dt)?;
            for m in 0..slices - 1 {
                let fy = f.slice(m)[y];
                if fy == 0.0 {
                    continue;
                }
                for nn in m + 1..slices {
                    let k = kernel.field.slice(nn - m - 1);
                    for (o, kv) in out.slice_mut(nn).iter_mut().zip(k) {
                        *o += dt * fy * kv;
                    }
                }
            }
        }
    } else {
        for m in 0..slices - 1 {
            let source = f.time(m + 1);
            for y in 0..n {
                let fy = f.slice(m)[y];
                if fy == 0.0 {
                    continue;
                }
                let kernel = heat_kernel(grid, env, source, y, t_end, dt)?;
                for nn in m + 1..slices {
                    let k = kernel.field.slice(nn - m - 1);
                    for (o, kv) in out.slice_mut(nn).iter_mut().zip(k) {
                        *o += dt * fy * kv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Direct explicit stepping of `d_t u - div(a grad u) = f`, `u(t_0) = 0`.
pub fn step_with_source(grid: &TorusGrid, env: &Environment, f: &SpaceTimeField) -> Result<SpaceTimeField> {
    let n = grid.len();
    let dt = f.dt();
    env.check(grid, dt)?;
    let mut u = vec![0.0; n];
    let mut out = SpaceTimeField::with_capacity(f.t0(), dt, n, f.n_slices());
    out.push_slice(&u);
    let mut lap = vec![0.0; n];
    for j in 0..f.n_slices().saturating_sub(1) {
        apply_operator(grid, env.coefficients_at(f.time(j))?, &u, None, &mut lap);
        for ((a, l), s) in u.iter_mut().zip(&lap).zip(f.slice(j)) {
            *a += dt * (l + s);
        }
        out.push_slice(&u);
    }
    Ok(out)
}

/// Explicit stepping of `d_t w = div(a grad w) + div F` on the torus from
/// `init`, with edge forcing `F` given per slice (width `|Lambda| d`) or
/// absent.
pub fn solve_linear_parabolic(
    grid: &TorusGrid,
    env: &Environment,
    forcing: Option<&SpaceTimeField>,
    init: &[f64],
    time: &TimeGrid,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    env.check(grid, time.dt)?;
    let n = grid.len();
    if init.len() != n {
        return invalid("initial datum does not match the grid");
    }
    if let Some(f) = forcing {
        if f.width() != n * grid.dim() {
            return invalid("edge forcing does not match the grid");
        }
    }
    let mut u = init.to_vec();
    let mut rhs = vec![0.0; n];
    observer.observe(0, time.s_minus, &u);
    for step in 0..time.steps {
        let t = time.time(step);
        let f = match forcing {
            Some(f) => Some(f.at(t)?),
            None => None,
        };
        apply_operator(grid, env.coefficients_at(t)?, &u, f, &mut rhs);
        for (a, b) in u.iter_mut().zip(&rhs) {
            *a += time.dt * b;
        }
        observer.observe(step + 1, time.time(step + 1), &u);
    }
    Ok(u)
}

/// Explicit stepping of `d_t w = div(a grad w)` at unit mesh on the padded
/// grid of a Dirichlet domain, with non-interior points held at their
/// initial values. Coefficients are indexed by padded site and axis.
pub fn solve_linear_parabolic_dirichlet(
    dom: &DirichletDomain,
    a: &EdgeField,
    init: &[f64],
    time: &TimeGrid,
    observer: &mut dyn Observer,
) -> Result<Vec<f64>> {
    let d = dom.dim();
    let upper = a.values.iter().copied().fold(0.0, f64::max);
    let max = 1.0 / (8.0 * d as f64 * upper);
    if time.dt > max * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt: time.dt, max });
    }
    let mut u = init.to_vec();
    let mut next = u.clone();
    observer.observe(0, time.s_minus, &u);
    for step in 0..time.steps {
        for &x in dom.interior() {
            let mut acc = 0.0;
            for i in 0..d {
                let s = dom.stride(i);
                acc += a.get(x, i) * (u[x + s] - u[x]) - a.get(x - s, i) * (u[x] - u[x - s]);
            }
            next[x] = u[x] + time.dt * acc;
        }
        std::mem::swap(&mut u, &mut next);
        observer.observe(step + 1, time.time(step + 1), &u);
    }
    Ok(u)
}

/// Streaming solver for the linearized corrector
/// `d_t w - div(a (grad w + xi)) = 0`, `a = V''(p + grad phi)`, fed one
/// slice of the slope-`p` trajectory at a time.
#[derive(Debug, Clone)]
pub struct LinearizedCorrector {
    pub w: Vec<f64>,
    p: Vec<f64>,
    xi: Vec<f64>,
    dt: f64,
    coef: Vec<f64>,
    rhs: Vec<f64>,
}

impl LinearizedCorrector {
    pub fn new(grid: &TorusGrid, v: &Potential, p: &[f64], xi: &[f64], dt: f64) -> Result<Self> {
        crate::dynamics::check_dt(dt, grid.dim(), v.c_plus())?;
        if p.len() != grid.dim() || xi.len() != grid.dim() {
            return invalid("slope and direction must have the grid dimension");
        }
        Ok(Self {
            w: vec![0.0; grid.len()],
            p: p.to_vec(),
            xi: xi.to_vec(),
            dt,
            coef: vec![0.0; grid.len() * grid.dim()],
            rhs: vec![0.0; grid.len()],
        })
    }

    /// Coefficients `V''(p + grad phi)` of the last advance.
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    /// Fills the coefficient field from `phi` without advancing.
    pub fn load_coefficients(&mut self, grid: &TorusGrid, v: &Potential, phi: &[f64]) {
        let d = grid.dim();
        for x in 0..grid.len() {
            for i in 0..d {
                self.coef[x * d + i] = v.ddv(self.p[i] + grid.grad(phi, x, i));
            }
        }
    }

    /// One explicit step using the environment of the slice `phi`.
    pub fn advance(&mut self, grid: &TorusGrid, v: &Potential, phi: &[f64]) {
        self.load_coefficients(grid, v, phi);
        self.advance_loaded(grid);
    }

    /// One explicit step with the coefficients already loaded.
    pub fn advance_loaded(&mut self, grid: &TorusGrid) {
        let d = grid.dim();
        let mut flux_xi = vec![0.0; grid.len() * d];
        for x in 0..grid.len() {
            for i in 0..d {
                flux_xi[x * d + i] = self.coef[x * d + i] * self.xi[i];
            }
        }
        apply_operator(grid, Coefficients::Edges(&self.coef), &self.w, Some(&flux_xi), &mut self.rhs);
        for (a, b) in self.w.iter_mut().zip(&self.rhs) {
            *a += self.dt * b;
        }
    }
}

/// The linearized corrector along a stored trajectory of the slope-`p`
/// dynamic, started from zero at the trajectory's first slice.
pub fn solve_linearized_corrector(
    grid: &TorusGrid,
    trajectory: &SpaceTimeField,
    p: &[f64],
    xi: &[f64],
    v: &Potential,
) -> Result<SpaceTimeField> {
    if trajectory.width() != grid.len() {
        return Err(Error::TimeRange("trajectory does not match the grid".into()));
    }
    if trajectory.n_slices() < 1 {
        return Err(Error::TimeRange("empty trajectory".into()));
    }
    let mut lin = LinearizedCorrector::new(grid, v, p, xi, trajectory.dt())?;
    let mut out = SpaceTimeField::with_capacity(trajectory.t0(), trajectory.dt(), grid.len(), trajectory.n_slices());
    out.push_slice(&lin.w);
    for j in 0..trajectory.n_slices() - 1 {
        lin.advance(grid, v, trajectory.slice(j));
        out.push_slice(&lin.w);
    }
    Ok(out)
}

/// `p -> D sigma(p)` for the homogenized equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EffectiveGradient {
    Identity,
    /// Componentwise odd, monotone, piecewise-linear profile `g` with
    /// `D sigma(p)_i = g(p_i)`; the table lists `g` on increasing
    /// nonnegative nodes starting at 0.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

impl EffectiveGradient {
    pub fn tabulated(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return invalid("tabulated gradient needs at least two matching nodes and values");
        }
        if nodes[0] != 0.0 || values[0] != 0.0 {
            return invalid("tabulated gradient must start at g(0) = 0");
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("tabulation nodes must be strictly increasing");
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("tabulated gradient must be strictly increasing");
        }
        Ok(Self::Tabulated { nodes, values })
    }

    /// Lipschitz constant of the map.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Tabulated { nodes, values } => nodes
                .windows(2)
                .zip(values.windows(2))
                .map(|(n, v)| (v[1] - v[0]) / (n[1] - n[0]))
                .fold(0.0, f64::max),
        }
    }

    /// One component `g(s)`; the flag reports evaluation beyond the table
    /// (the value is clamped to the last node).
    pub fn component(&self, s: f64) -> (f64, bool) {
        match self {
            Self::Identity => (s, false),
            Self::Tabulated { nodes, values } => {
                let a = s.abs();
                let last = *nodes.last().unwrap();
                let (val, clamped) = if a > last {
                    (*values.last().unwrap(), true)
                } else {
                    let k = nodes.partition_point(|&n| n <= a).clamp(1, nodes.len() - 1);
                    let t = (a - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
                    (values[k - 1] + t * (values[k] - values[k - 1]), false)
                };
                (val.copysign(s), clamped)
            }
        }
    }

    pub fn eval(&self, p: &[f64], out: &mut [f64]) -> bool {
        let mut clamped = false;
        for (o, &s) in out.iter_mut().zip(p) {
            let (v, c) = self.component(s);
            *o = v;
            clamped |= c;
        }
        clamped
    }
}

/// `eps^-1 (u(x + eps e_i) - u(x))` for every axis, on the padded grid.
pub fn vector_gradient(dom: &DirichletDomain, u: &[f64], x: usize, out: &mut [f64]) {
    let inv = 1.0 / dom.eps();
    for (i, o) in out.iter_mut().enumerate() {
        *o = (u[x + dom.stride(i)] - u[x]) * inv;
    }
}

/// `eps^-1 sum_i (D sigma(grad u(x))_i - D sigma(grad u(x - eps e_i))_i)` at
/// an interior site; satisfies the summation-by-parts identity
/// `-sum (op u) v = sum D sigma(grad u) . grad v` for compactly supported
/// `u`, `v`.
pub fn homogenized_operator(dsigma: &EffectiveGradient, dom: &DirichletDomain, u: &[f64], x: usize) -> (f64, bool) {
    let d = dom.dim();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d];
    let mut gx = vec![0.0; d];
    vector_gradient(dom, u, x, &mut g);
    let mut clamped = dsigma.eval(&g, &mut gx);
    let mut acc = 0.0;
    for i in 0..d {
        let y = x - dom.stride(i);
        vector_gradient(dom, u, y, &mut g);
        clamped |= dsigma.eval(&g, &mut h);
        acc += gx[i] - h[i];
    }
    (acc / dom.eps(), clamped)
}

/// Outcome of [`solve_homogenized`].
#[derive(Debug, Clone)]
pub struct HomogenizedRun {
    pub last: Vec<f64>,
    /// Whether any evaluation left the tabulated range.
    pub clamped: bool,
}

/// Explicit stepping of `d_t u = div^eps D sigma(grad^eps u)` on `[t0, t1]`
/// with every non-interior point of the padded grid pinned to the cell
/// averages of `f`.
#[allow(clippy::too_many_arguments)]
pub fn solve_homogenized(
    dsigma: &EffectiveGradient,
    dom: &DirichletDomain,
    f: &dyn BoundaryData,
    t0: f64,
    t1: f64,
    dt: f64,
    observer: &mut dyn Observer,
) -> Result<HomogenizedRun> {
    let eps = dom.eps();
    let max = eps * eps / (8.0 * dom.dim() as f64 * dsigma.lipschitz());
    let time = TimeGrid::new(t0, t1, dt)?;
    if time.dt > max * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt: time.dt, max });
    }
    let pinned: Vec<usize> = (0..dom.len()).filter(|&i| dom.kind(i) != SiteKind::Interior).collect();
    let mut u = vec![0.0; dom.len()];
    for i in 0..dom.len() {
        u[i] = dom.cell_average(i, |y| f.value(t0, y));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::MissingBoundaryData("datum is not finite at the initial time".into()));
    }
    let mut stepper = HomogenizedStepper::new(dom);
    let mut clamped = false;
    observer.observe(0, t0, &u);
    for step in 0..time.steps {
        clamped |= stepper.step(dsigma, dom, &mut u, time.dt);
        let t = time.time(step + 1);
        for &b in &pinned {
            u[b] = dom.cell_average(b, |y| f.value(t, y));
        }
        observer.observe(step + 1, t, &u);
    }
    Ok(HomogenizedRun { last: u, clamped })
}

/// Reusable buffers for the homogenized update.
pub struct HomogenizedStepper {
    flux: Vec<f64>,
    grad: Vec<f64>,
    out: Vec<f64>,
}

impl HomogenizedStepper {
    pub fn new(dom: &DirichletDomain) -> Self {
        Self { flux: vec![0.0; dom.len() * dom.dim()], grad: vec![0.0; dom.dim()], out: vec![0.0; dom.dim()] }
    }

    /// Advances the interior of `u` by one explicit step; returns the
    /// clamping flag.
    pub fn step(&mut self, dsigma: &EffectiveGradient, dom: &DirichletDomain, u: &mut [f64], dt: f64) -> bool {
        let d = dom.dim();
        let mut clamped = false;
        // D sigma(grad u(y)) is needed at interior sites and their backward
        // neighbors.
        let mut needed = vec![false; dom.len()];
        for &x in dom.interior() {
            needed[x] = true;
            for i in 0..d {
                needed[x - dom.stride(i)] = true;
            }
        }
        for (y, &need) in needed.iter().enumerate() {
            if need {
                vector_gradient(dom, u, y, &mut self.grad);
                clamped |= dsigma.eval(&self.grad, &mut self.out);
                self.flux[y * d..(y + 1) * d].copy_from_slice(&self.out);
            }
        }
        let inv = 1.0 / dom.eps();
        for &x in dom.interior() {
            let mut acc = 0.0;
            for i in 0..d {
                acc += self.flux[x * d + i] - self.flux[(x - dom.stride(i)) * d + i];
            }
            u[x] += dt * inv * acc;
        }
        clamped
    }
}

/// `Phi_{C,L}(t, x) = C (t v 1)^{-d/2} exp(-|x| / (C sqrt t)) exp(-t / (C L^2))`.
pub fn phi_cl(c: f64, l: f64, dim: usize, t: f64, dist: f64) -> f64 {
    c * t.max(1.0).powf(-(dim as f64) / 2.0) * (-dist / (c * t.sqrt())).exp() * (-t / (c * l * l)).exp()
}

/// Result of [`nash_aronson_fit`].
#[derive(Debug, Clone, Serialize)]
pub struct NashAronsonFit {
    /// Smallest `C` in `{1, 2, 4, ..., 64}` with `P + 1/|Lambda| <= Phi_{C,L}`.
    pub constant: Option<f64>,
    /// Minimum of `P + 1/|Lambda|` over the checked slices.
    pub min_shifted: f64,
}

pub const NASH_ARONSON_GRID: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Fits the Gaussian upper bound over slices with `0 < t - s <= L^2`, using
/// minimal-image Euclidean distances on the torus.
pub fn nash_aronson_fit(grid: &TorusGrid, table: &HeatKernelTable) -> NashAronsonFit {
    let n = grid.len();
    let l = grid.radius() as f64;
    let src = grid.offsets(table.source_site);
    let dist: Vec<f64> = (0..n)
        .map(|x| {
            let o = grid.offsets(x);
            o.iter()
                .zip(&src)
                .map(|(a, b)| {
                    let side = grid.side() as i64;
                    let dd = (a - b).rem_euclid(side);
                    (dd.min(side - dd) as f64).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut min_shifted = f64::INFINITY;
    let mut candidates: Vec<bool> = vec![true; NASH_ARONSON_GRID.len()];
    for j in 1..table.field.n_slices() {
        let t = j as f64 * table.field.dt();
        if t > l * l + 1e-12 {
            break;
        }
        let slice = table.field.slice(j);
        for x in 0..n {
            let shifted = slice[x] + 1.0 / n as f64;
            min_shifted = min_shifted.min(shifted);
            for (ok, &c) in candidates.iter_mut().zip(&NASH_ARONSON_GRID) {
                if *ok && shifted > phi_cl(c, l, grid.dim(), t, dist[x]) {
                    *ok = false;
                }
            }
        }
    }
    let constant = candidates.iter().zip(&NASH_ARONSON_GRID).find(|(ok, _)| **ok).map(|(_, &c)| c);
    NashAronsonFit { constant, min_shifted }
}
