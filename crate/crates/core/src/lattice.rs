//! Periodic and Dirichlet lattices, parabolic cylinders, and discrete calculus.

use crate::error::{invalid, Error, Result};
use crate::noise::site_key;
use crate::potential::Potential;
use crate::quadrature::gauss_legendre;

/// Periodic box `{-L..L}^d` (side `2L+1`), optionally translated so that its
/// sites carry absolute coordinates `center + offset`.
#[derive(Debug, Clone)]
pub struct TorusGrid {
    dim: usize,
    radius: usize,
    side: usize,
    center: Vec<i64>,
    plus: Vec<u32>,
    minus: Vec<u32>,
    keys: Vec<u64>,
}

impl TorusGrid {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        Self::centered(dim, radius, &vec![0; dim.max(1)][..dim])
    }

    pub fn centered(dim: usize, radius: usize, center: &[i64]) -> Result<Self> {
        if dim < 2 {
            return invalid(format!("torus dimension must be at least 2, got {dim}"));
        }
        if dim > 4 {
            return invalid(format!("torus dimension above 4 is not supported, got {dim}"));
        }
        if radius < 1 {
            return invalid("torus radius must be at least 1");
        }
        if center.len() != dim {
            return invalid("center has the wrong number of coordinates");
        }
        let side = 2 * radius + 1;
        let n = side.pow(dim as u32);
        if n > u32::MAX as usize {
            return invalid("torus too large");
        }
        let mut plus = vec![0u32; n * dim];
        let mut minus = vec![0u32; n * dim];
        let mut keys = vec![0u64; n];
        let mut idx = vec![0usize; dim];
        let mut abs = vec![0i64; dim];
        for site in 0..n {
            let mut rem = site;
            for axis in (0..dim).rev() {
                idx[axis] = rem % side;
                rem /= side;
            }
            for axis in 0..dim {
                let stride = side.pow((dim - 1 - axis) as u32);
                let up = if idx[axis] + 1 == side { site + stride - side * stride } else { site + stride };
                let down = if idx[axis] == 0 { site + (side - 1) * stride } else { site - stride };
                plus[site * dim + axis] = up as u32;
                minus[site * dim + axis] = down as u32;
                abs[axis] = center[axis] + idx[axis] as i64 - radius as i64;
            }
            keys[site] = site_key(&abs);
        }
        Ok(Self { dim, radius, side, center: center.to_vec(), plus, minus, keys })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn center(&self) -> &[i64] {
        &self.center
    }

    /// Noise keys of the sites, derived from their absolute coordinates.
    pub fn site_keys(&self) -> &[u64] {
        &self.keys
    }

    /// Offset of `site` from the center, each component in `-L..=L`.
    pub fn offsets(&self, site: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.dim];
        let mut rem = site;
        for axis in (0..self.dim).rev() {
            out[axis] = (rem % self.side) as i64 - self.radius as i64;
            rem /= self.side;
        }
        out
    }

    /// Absolute coordinates of `site`.
    pub fn coords(&self, site: usize) -> Vec<i64> {
        let mut out = self.offsets(site);
        for (o, c) in out.iter_mut().zip(&self.center) {
            *o += c;
        }
        out
    }

    /// Site at the given offset from the center, wrapped periodically.
    pub fn site_at(&self, offset: &[i64]) -> usize {
        debug_assert_eq!(offset.len(), self.dim);
        let side = self.side as i64;
        offset.iter().fold(0usize, |acc, &o| {
            acc * self.side + (o + self.radius as i64).rem_euclid(side) as usize
        })
    }

    #[inline]
    pub fn plus(&self, site: usize, axis: usize) -> usize {
        self.plus[site * self.dim + axis] as usize
    }

    #[inline]
    pub fn minus(&self, site: usize, axis: usize) -> usize {
        self.minus[site * self.dim + axis] as usize
    }

    /// Axis and orientation of the directed edge `(x, y)`, if `y ~ x`.
    pub fn edge_direction(&self, x: usize, y: usize) -> Option<(usize, bool)> {
        (0..self.dim).find_map(|axis| {
            if self.plus(x, axis) == y {
                Some((axis, true))
            } else if self.minus(x, axis) == y {
                Some((axis, false))
            } else {
                None
            }
        })
    }

    /// Forward difference `u(x + e_axis) - u(x)`.
    #[inline]
    pub fn grad(&self, u: &[f64], site: usize, axis: usize) -> f64 {
        u[self.plus(site, axis)] - u[site]
    }

    /// `u(y) - u(x)` for a directed edge `(x, y)`.
    pub fn grad_edge(&self, u: &[f64], x: usize, y: usize) -> Result<f64> {
        self.check_site(x)?;
        self.check_site(y)?;
        match self.edge_direction(x, y) {
            Some(_) => Ok(u[y] - u[x]),
            None => Err(Error::OutsideDomain(format!("sites {x} and {y} are not neighbors"))),
        }
    }

    /// The gradient of `u` on every canonical edge.
    pub fn gradient(&self, u: &[f64]) -> EdgeField {
        let mut g = EdgeField::zeros(self.dim, self.len());
        for site in 0..self.len() {
            for axis in 0..self.dim {
                g.values[site * self.dim + axis] = self.grad(u, site, axis);
            }
        }
        g
    }

    /// `sum_{y ~ x} g(x, y)`.
    #[inline]
    pub fn divergence(&self, g: &EdgeField, site: usize) -> f64 {
        (0..self.dim)
            .map(|axis| g.get(site, axis) - g.get(self.minus(site, axis), axis))
            .sum()
    }

    pub fn divergence_field(&self, g: &EdgeField) -> Vec<f64> {
        (0..self.len()).map(|x| self.divergence(g, x)).collect()
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|x| {
                (0..self.dim)
                    .map(|axis| u[self.plus(x, axis)] + u[self.minus(x, axis)] - 2.0 * u[x])
                    .sum()
            })
            .collect()
    }

    /// `sum_{y ~ x} V'(q.(y - x) + u(y) - u(x))`.
    pub fn nonlinear_div(&self, v: &Potential, q: &[f64], u: &[f64], site: usize) -> f64 {
        let mut acc = 0.0;
        for axis in 0..self.dim {
            acc += v.dv(q[axis] + u[self.plus(site, axis)] - u[site]);
            acc += v.dv(-q[axis] + u[self.minus(site, axis)] - u[site]);
        }
        acc
    }

    /// Sites of the box of the given radius around `offset`.
    pub fn box_sites(&self, offset: &[i64], radius: usize) -> Result<Vec<usize>> {
        if 2 * radius + 1 > self.side {
            return invalid(format!(
                "box of radius {radius} does not fit in a torus of side {}",
                self.side
            ));
        }
        let r = radius as i64;
        let width = 2 * radius + 1;
        let count = width.pow(self.dim as u32);
        let mut out = Vec::with_capacity(count);
        let mut rel = vec![0i64; self.dim];
        for k in 0..count {
            let mut rem = k;
            for axis in (0..self.dim).rev() {
                rel[axis] = offset[axis] + (rem % width) as i64 - r;
                rem /= width;
            }
            out.push(self.site_at(&rel));
        }
        Ok(out)
    }

    fn check_site(&self, x: usize) -> Result<()> {
        if x < self.len() {
            Ok(())
        } else {
            Err(Error::OutsideDomain(format!("site {x} not in a torus of {} sites", self.len())))
        }
    }
}

/// Values on the canonical edges `(x, x + e_i)`; the reverse orientation
/// carries the negated value.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    dim: usize,
    pub values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(dim: usize, sites: usize) -> Self {
        Self { dim, values: vec![0.0; dim * sites] }
    }

    pub fn constant(dim: usize, sites: usize, p: &[f64]) -> Self {
        let mut values = Vec::with_capacity(dim * sites);
        for _ in 0..sites {
            values.extend_from_slice(&p[..dim]);
        }
        Self { dim, values }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % dim, 0);
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sites(&self) -> usize {
        self.values.len() / self.dim
    }

    #[inline]
    pub fn get(&self, site: usize, axis: usize) -> f64 {
        self.values[site * self.dim + axis]
    }

    #[inline]
    pub fn set(&mut self, site: usize, axis: usize, value: f64) {
        self.values[site * self.dim + axis] = value;
    }

    /// `g(x, y)` for a directed edge of `grid`.
    pub fn directed(&self, grid: &TorusGrid, x: usize, y: usize) -> Result<f64> {
        match grid.edge_direction(x, y) {
            Some((axis, true)) => Ok(self.get(x, axis)),
            Some((axis, false)) => Ok(-self.get(y, axis)),
            None => Err(Error::OutsideDomain(format!("sites {x} and {y} are not neighbors"))),
        }
    }
}

/// Classification of a padded Dirichlet lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteKind {
    Interior,
    Boundary,
    /// Padding points adjacent to no interior site (box corners and edges).
    Unused,
}

/// The sites `eps Z^d` inside an open axis-aligned box, stored on a padded
/// grid that also holds the external vertex boundary.
#[derive(Debug, Clone)]
pub struct DirichletDomain {
    dim: usize,
    n: usize,
    eps: f64,
    lo: Vec<i64>,
    extent: Vec<usize>,
    strides: Vec<usize>,
    kinds: Vec<SiteKind>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    keys: Vec<u64>,
}

impl DirichletDomain {
    /// The unit cube `(0, 1)^d` at mesh `1/n`.
    pub fn unit_cube(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, &vec![0; dim], &vec![n as i64; dim])
    }

    /// The open box `prod_i (lo_i / n, hi_i / n)` at mesh `1/n`.
    pub fn new(dim: usize, n: usize, lo: &[i64], hi: &[i64]) -> Result<Self> {
        if !(1..=4).contains(&dim) {
            return invalid(format!("unsupported dimension {dim}"));
        }
        if n < 2 {
            return invalid("mesh parameter N must be at least 2");
        }
        if lo.len() != dim || hi.len() != dim {
            return invalid("box corners have the wrong number of coordinates");
        }
        if lo.iter().zip(hi).any(|(a, b)| b - a < 2) {
            return invalid("box must contain at least one interior site per axis");
        }
        let extent: Vec<usize> = lo.iter().zip(hi).map(|(a, b)| (b - a + 1) as usize).collect();
        let mut strides = vec![1usize; dim];
        for axis in (0..dim.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * extent[axis + 1];
        }
        let total: usize = extent.iter().product();
        let mut kinds = Vec::with_capacity(total);
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut keys = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut on_face = 0;
            let mut abs = vec![0i64; dim];
            for axis in 0..dim {
                let k = rem / strides[axis];
                rem %= strides[axis];
                if k == 0 || k + 1 == extent[axis] {
                    on_face += 1;
                }
                abs[axis] = lo[axis] + k as i64;
            }
            let kind = match on_face {
                0 => SiteKind::Interior,
                1 => SiteKind::Boundary,
                _ => SiteKind::Unused,
            };
            match kind {
                SiteKind::Interior => interior.push(idx),
                SiteKind::Boundary => boundary.push(idx),
                SiteKind::Unused => {}
            }
            kinds.push(kind);
            keys.push(site_key(&abs));
        }
        Ok(Self {
            dim,
            n,
            eps: 1.0 / n as f64,
            lo: lo.to_vec(),
            extent,
            strides,
            kinds,
            interior,
            boundary,
            keys,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mesh parameter `N = 1/eps`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of padded grid points (interior, boundary, and unused).
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn extent(&self) -> &[usize] {
        &self.extent
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn kind(&self, idx: usize) -> SiteKind {
        self.kinds[idx]
    }

    pub fn site_keys(&self) -> &[u64] {
        &self.keys
    }

    /// Integer lattice coordinates `x / eps`.
    pub fn lattice_coords(&self, idx: usize) -> Vec<i64> {
        let mut rem = idx;
        (0..self.dim)
            .map(|axis| {
                let k = rem / self.strides[axis];
                rem %= self.strides[axis];
                self.lo[axis] + k as i64
            })
            .collect()
    }

    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for axis in 0..self.dim {
            let k = coords[axis] - self.lo[axis];
            if k < 0 || k as usize >= self.extent[axis] {
                return None;
            }
            idx += k as usize * self.strides[axis];
        }
        Some(idx)
    }

    /// Macroscopic position `x = eps * k`.
    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.lattice_coords(idx).iter().map(|&k| k as f64 * self.eps).collect()
    }

    /// Neighbor along `axis` on the padded grid.
    pub fn step(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let k = (idx / self.strides[axis]) % self.extent[axis];
        if forward {
            (k + 1 < self.extent[axis]).then(|| idx + self.strides[axis])
        } else {
            (k > 0).then(|| idx - self.strides[axis])
        }
    }

    /// `(u(x + eps e_axis) - u(x)) / eps`.
    pub fn grad(&self, u: &[f64], idx: usize, axis: usize) -> Result<f64> {
        let y = self
            .step(idx, axis, true)
            .ok_or_else(|| Error::OutsideDomain(format!("edge leaves the padded grid at {idx}")))?;
        self.grad_edge(u, idx, y)
    }

    /// `(u(y) - u(x)) / eps` for a directed edge `(x, y)`.
    pub fn grad_edge(&self, u: &[f64], x: usize, y: usize) -> Result<f64> {
        for &s in &[x, y] {
            if s >= self.len() || self.kinds[s] == SiteKind::Unused {
                return Err(Error::OutsideDomain(format!(
                    "site {s} is neither interior nor a boundary site"
                )));
            }
        }
        let adjacent = (0..self.dim).any(|axis| {
            self.step(x, axis, true) == Some(y) || self.step(x, axis, false) == Some(y)
        });
        if !adjacent {
            return Err(Error::OutsideDomain(format!("sites {x} and {y} are not neighbors")));
        }
        Ok((u[y] - u[x]) / self.eps)
    }

    /// Normalized average of `f` over the cube `x + [-eps, eps]^d`.
    pub fn cell_average(&self, idx: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        const NODES: usize = 6;
        let (nodes, weights) = gauss_legendre(NODES);
        let x = self.position(idx);
        let mut point = vec![0.0; self.dim];
        let total = NODES.pow(self.dim as u32);
        let mut acc = 0.0;
        for k in 0..total {
            let mut rem = k;
            let mut w = 1.0;
            for axis in 0..self.dim {
                let j = rem % NODES;
                rem /= NODES;
                point[axis] = x[axis] + self.eps * nodes[j];
                w *= weights[j] * 0.5;
            }
            acc += w * f(&point);
        }
        acc
    }
}

/// A time interval `(s_minus, s_plus)` times either a box of the torus or
/// the whole torus.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicCylinder {
    pub s_minus: f64,
    pub s_plus: f64,
    /// Offset of the box center from the torus center.
    pub center: Vec<i64>,
    /// Box radius; `None` means the whole torus.
    pub radius: Option<usize>,
}

impl ParabolicCylinder {
    pub fn new(s_minus: f64, s_plus: f64, center: Vec<i64>, radius: Option<usize>) -> Result<Self> {
        if !(s_minus < s_plus) {
            return Err(Error::TimeRange(format!("empty interval ({s_minus}, {s_plus})")));
        }
        Ok(Self { s_minus, s_plus, center, radius })
    }

    /// `(s_minus, s_plus)` times the whole torus.
    pub fn full(dim: usize, s_minus: f64, s_plus: f64) -> Result<Self> {
        Self::new(s_minus, s_plus, vec![0; dim], None)
    }

    /// `Q_r = (-r^2, 0) x {-r..r}^d`.
    pub fn standard(dim: usize, r: usize) -> Result<Self> {
        Self::new(-((r * r) as f64), 0.0, vec![0; dim], Some(r))
    }

    /// The triadic cylinder of spatial side `3^n` and duration `9^n`.
    pub fn triadic(dim: usize, n: u32) -> Result<Self> {
        let side = 3usize.pow(n);
        Self::new(-((side * side) as f64), 0.0, vec![0; dim], Some((side - 1) / 2))
    }

    /// The same cylinder moved by `(dt, dx)`.
    pub fn shifted(&self, dt: f64, dx: &[i64]) -> Self {
        Self {
            s_minus: self.s_minus + dt,
            s_plus: self.s_plus + dt,
            center: self.center.iter().zip(dx).map(|(c, d)| c + d).collect(),
            radius: self.radius,
        }
    }

    pub fn duration(&self) -> f64 {
        self.s_plus - self.s_minus
    }

    pub fn spatial_count(&self, grid: &TorusGrid) -> usize {
        match self.radius {
            Some(r) => (2 * r + 1).pow(grid.dim() as u32),
            None => grid.len(),
        }
    }

    /// `|Q| = |I| |Lambda|`.
    pub fn volume(&self, grid: &TorusGrid) -> f64 {
        self.duration() * self.spatial_count(grid) as f64
    }

    pub fn sites(&self, grid: &TorusGrid) -> Result<Vec<usize>> {
        match self.radius {
            Some(r) => grid.box_sites(&self.center, r),
            None => Ok((0..grid.len()).collect()),
        }
    }
}

/// Real values on a uniform time grid; each slice holds `width` values
/// (one per site, or one per canonical edge for edge trajectories).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    t0: f64,
    dt: f64,
    width: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(t0: f64, dt: f64, width: usize, slices: usize) -> Self {
        Self { t0, dt, width, data: vec![0.0; width * slices] }
    }

    pub fn from_slices(t0: f64, dt: f64, slices: Vec<Vec<f64>>) -> Self {
        let width = slices.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(width * slices.len());
        for s in &slices {
            assert_eq!(s.len(), width, "slices must share one indexing");
            data.extend_from_slice(s);
        }
        Self { t0, dt, width, data }
    }

    /// An empty trajectory that slices are appended to.
    pub fn with_capacity(t0: f64, dt: f64, width: usize, slices: usize) -> Self {
        Self { t0, dt, width, data: Vec::with_capacity(width * slices) }
    }

    pub fn push_slice(&mut self, slice: &[f64]) {
        assert_eq!(slice.len(), self.width);
        self.data.extend_from_slice(slice);
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_slices(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_slices().saturating_sub(1))
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.data[j * self.width..(j + 1) * self.width]
    }

    pub fn slice_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.width..(j + 1) * self.width]
    }

    pub fn last(&self) -> &[f64] {
        self.slice(self.n_slices() - 1)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1))
    }

    /// Index of the slice nearest to time `t`.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let x = (t - self.t0) / self.dt;
        let j = x.round();
        let n = self.n_slices();
        if n == 0 || j < -1e-9 || j > (n - 1) as f64 + 1e-9 {
            return Err(Error::TimeRange(format!(
                "time {t} outside [{}, {}]",
                self.t0,
                self.t_end()
            )));
        }
        Ok(j.max(0.0) as usize)
    }

    pub fn at(&self, t: f64) -> Result<&[f64]> {
        Ok(self.slice(self.index_at(t)?))
    }

    /// Trapezoid weights over the snapped interval `[s_minus, s_plus]`,
    /// normalized to sum to one.
    pub fn time_weights(&self, s_minus: f64, s_plus: f64) -> Result<Vec<(usize, f64)>> {
        let j0 = self.index_at(s_minus)?;
        let j1 = self.index_at(s_plus)?;
        if j1 <= j0 {
            return Err(Error::TimeRange(format!(
                "interval ({s_minus}, {s_plus}) spans no time step"
            )));
        }
        Ok(trapezoid_weights(j0, j1))
    }
}

/// Normalized trapezoid weights on slice indices `j0..=j1`.
pub fn trapezoid_weights(j0: usize, j1: usize) -> Vec<(usize, f64)> {
    let steps = (j1 - j0) as f64;
    (j0..=j1)
        .map(|j| {
            let w = if j == j0 || j == j1 { 0.5 } else { 1.0 };
            (j, w / steps)
        })
        .collect()
}

/// Average of a site trajectory over a cylinder.
pub fn cylinder_average(f: &SpaceTimeField, grid: &TorusGrid, q: &ParabolicCylinder) -> Result<f64> {
    if f.width() != grid.len() {
        return invalid("field width does not match the grid");
    }
    let sites = q.sites(grid)?;
    let weights = f.time_weights(q.s_minus, q.s_plus)?;
    let mut acc = 0.0;
    for (j, w) in weights {
        let slice = f.slice(j);
        acc += w * sites.iter().map(|&x| slice[x]).sum::<f64>();
    }
    Ok(acc / sites.len() as f64)
}

/// Componentwise average of an edge trajectory (width `|Lambda| d`) over a
/// cylinder: component `i` averages `g(t, (x, x + e_i))`.
pub fn cylinder_average_edges(
    f: &SpaceTimeField,
    grid: &TorusGrid,
    q: &ParabolicCylinder,
) -> Result<Vec<f64>> {
    let d = grid.dim();
    if f.width() != grid.len() * d {
        return invalid("edge trajectory width does not match the grid");
    }
    let sites = q.sites(grid)?;
    let weights = f.time_weights(q.s_minus, q.s_plus)?;
    let mut acc = vec![0.0; d];
    for (j, w) in weights {
        let slice = f.slice(j);
        for &x in &sites {
            for (i, a) in acc.iter_mut().enumerate() {
                *a += w * slice[x * d + i];
            }
        }
    }
    for a in &mut acc {
        *a /= sites.len() as f64;
    }
    Ok(acc)
}

/// The cells of side `3^m` (duration `9^m`) tiling the triadic cylinder of
/// side `3^n`, ordered by time then row-major in space.
pub fn partition_cells(dim: usize, m: u32, n: u32) -> Result<Vec<ParabolicCylinder>> {
    if m > n {
        return invalid(format!("cell scale {m} exceeds cylinder scale {n}"));
    }
    let big = 3i64.pow(n);
    let small = 3i64.pow(m);
    let per_axis = 3usize.pow(n - m);
    let time_cells = per_axis * per_axis;
    let cell_duration = (small * small) as f64;
    let spatial = per_axis.pow(dim as u32);
    let first_center = -(big - 1) / 2 + (small - 1) / 2;
    let mut out = Vec::with_capacity(time_cells * spatial);
    for k in 0..time_cells {
        let s_plus = -(k as f64) * cell_duration;
        for c in 0..spatial {
            let mut rem = c;
            let mut center = vec![0i64; dim];
            for axis in (0..dim).rev() {
                center[axis] = first_center + (rem % per_axis) as i64 * small;
                rem /= per_axis;
            }
            out.push(ParabolicCylinder {
                s_minus: s_plus - cell_duration,
                s_plus,
                center,
                radius: Some(((small - 1) / 2) as usize),
            });
        }
    }
    Ok(out)
}
