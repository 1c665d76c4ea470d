use serde::Serialize;

use crate::dynamics::{default_dt, run_corrector, SlopePath, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::lattice::{DirichletDomain, SpaceTimeField, TorusGrid};
use crate::noise::NoiseSource;
use crate::parabolic::EffectiveGradient;
use crate::potential::Potential;

/// `eps^{1/2}`, times `1 + |log eps|^{1/2}` in dimension 2 when requested.
pub fn mesoscale(eps: f64, dim: usize, with_log: bool) -> f64 {
    let base = eps.sqrt();
    if with_log && dim == 2 {
        base * (1.0 + eps.ln().abs().sqrt())
    } else {
        base
    }
}

/// Cubic B-spline on `[-2, 2]`.
fn bspline(s: f64) -> f64 {
    let a = s.abs();
    if a >= 2.0 {
        0.0
    } else if a >= 1.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoScaleOptions {
    pub kappa: f64,
    /// Microscopic time step of the correctors; defaults to `1 / (8 d c_plus)`.
    pub dt_micro: Option<f64>,
}

/// `w = u_hom + eps sum_y chi_y phi_y(t / eps^2, x / eps; xi_y(t))` on the
/// padded grid of a Dirichlet domain, at the time slices of the
/// homogenized solution.
#[derive(Debug, Clone)]
pub struct TwoScaleExpansion {
    pub dom: DirichletDomain,
    pub kappa: f64,
    /// Mesoscopic centers `y`, on the grid `kappa Z^d` inside the domain.
    pub centers: Vec<Vec<f64>>,
    /// For every padded site, the nonzero `(center, chi_y(x))`.
    pub partition: Vec<Vec<(usize, f64)>>,
    /// Right ends of the slope blocks (duration `4 kappa^2`).
    pub block_ends: Vec<f64>,
    /// `slopes[center][block]`.
    pub slopes: Vec<Vec<Vec<f64>>>,
    pub corrector_grids: Vec<TorusGrid>,
    /// Microscopic correctors at the homogenized time slices.
    pub correctors: Vec<SpaceTimeField>,
    /// Padded site to corrector torus site, per center.
    pub site_maps: Vec<Vec<usize>>,
    pub homogenized: SpaceTimeField,
    pub field: SpaceTimeField,
    /// `grad u_hom - sum_y chi_y(x + e_i) xi_y + eps sum_y phi_y grad chi_y`
    /// at interior sites (width `len * d`, zero elsewhere).
    pub remainder: SpaceTimeField,
    pub micro_radius: usize,
}

fn domain_bounds(dom: &DirichletDomain) -> (Vec<f64>, Vec<f64>) {
    (dom.position(0), dom.position(dom.len() - 1))
}

/// Average of the vector gradient of `u` over the interior sites in
/// `center + [-half, half]^d` and the slices with times in `(t_lo, t_hi]`
/// (trapezoid weights over the snapped interval).
fn gradient_average(dom: &DirichletDomain, u: &SpaceTimeField, center: &[f64], half: f64, t_lo: f64, t_hi: f64) -> Vec<f64> {
    let d = dom.dim();
    let sites: Vec<usize> = dom
        .interior()
        .iter()
        .copied()
        .filter(|&x| dom.position(x).iter().zip(center).all(|(a, c)| (a - c).abs() <= half + 1e-12))
        .collect();
    let mut acc = vec![0.0; d];
    if sites.is_empty() {
        return acc;
    }
    let weights = slice_weights(u, t_lo, t_hi);
    let mut g = vec![0.0; d];
    for (j, w) in weights {
        let s = u.slice(j);
        for &x in &sites {
            crate::parabolic::vector_gradient(dom, s, x, &mut g);
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += w * gi / sites.len() as f64;
            }
        }
    }
    acc
}

/// Normalized trapezoid weights on the slices inside `[t_lo, t_hi]`,
/// clipped to the stored range; a single slice gets weight one.
fn slice_weights(u: &SpaceTimeField, t_lo: f64, t_hi: f64) -> Vec<(usize, f64)> {
    let last = u.n_slices() - 1;
    let idx = |t: f64| (((t - u.t0()) / u.dt()).round().max(0.0) as usize).min(last);
    let (j0, j1) = (idx(t_lo), idx(t_hi));
    if j1 <= j0 {
        return vec![(j1, 1.0)];
    }
    crate::lattice::trapezoid_weights(j0, j1)
}

/// Builds the expansion from the homogenized solution `hom` (padded grid,
/// macroscopic times), running one corrector per mesoscopic center on the
/// torus of radius `2 floor(kappa / eps)` centered at `y / eps`, driven by
/// `noise` (or identically zero without noise).
pub fn build_two_scale(
    dom: &DirichletDomain,
    hom: &SpaceTimeField,
    v: &Potential,
    noise: Option<&NoiseSource>,
    opts: &TwoScaleOptions,
) -> Result<TwoScaleExpansion> {
    let eps = dom.eps();
    let d = dom.dim();
    let kappa = opts.kappa;
    if !(kappa > eps && kappa < 1.0) {
        return invalid(format!("mesoscale {kappa} must lie in (eps, 1)"));
    }
    if hom.width() != dom.len() || hom.n_slices() < 2 {
        return invalid("homogenized solution does not match the domain");
    }
    let (lo, hi) = domain_bounds(dom);
    // Centers on kappa Z^d strictly inside the domain.
    let ranges: Vec<(i64, i64)> = lo
        .iter()
        .zip(&hi)
        .map(|(&a, &b)| ((a / kappa + 1e-9).floor() as i64 + 1, (b / kappa - 1e-9).ceil() as i64 - 1))
        .collect();
    if ranges.iter().any(|(a, b)| b < a) {
        return invalid("no mesoscopic center inside the domain");
    }
    let mut centers = Vec::new();
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    'outer: loop {
        centers.push(k.iter().map(|&c| c as f64 * kappa).collect::<Vec<f64>>());
        for axis in (0..d).rev() {
            if k[axis] < ranges[axis].1 {
                k[axis] += 1;
                for kk in k.iter_mut().skip(axis + 1).zip(ranges.iter().skip(axis + 1)) {
                    *kk.0 = kk.1 .0;
                }
                continue 'outer;
            }
        }
        break;
    }

    let mut partition = Vec::with_capacity(dom.len());
    for x in 0..dom.len() {
        let pos = dom.position(x);
        let mut entries: Vec<(usize, f64)> = centers
            .iter()
            .enumerate()
            .filter_map(|(c, y)| {
                let b: f64 = pos.iter().zip(y).map(|(a, yy)| bspline((a - yy) / kappa)).product();
                (b > 0.0).then_some((c, b))
            })
            .collect();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if !(total > 0.0) {
            return Err(Error::Numerical(format!("partition of unity vanishes at site {x}")));
        }
        for e in &mut entries {
            e.1 /= total;
        }
        let check: f64 = entries.iter().map(|e| e.1).sum();
        if (check - 1.0).abs() > 1e-12 {
            return Err(Error::Numerical("partition of unity does not sum to one".into()));
        }
        partition.push(entries);
    }

    // Slope blocks of duration 4 kappa^2 ending at t0 + 4 kappa^2 n, then t1.
    let (t0, t1) = (hom.t0(), hom.t_end());
    let block = 4.0 * kappa * kappa;
    let mut block_ends = Vec::new();
    let mut te = t0 + block;
    while te < t1 - 1e-12 {
        block_ends.push(te);
        te += block;
    }
    block_ends.push(t1);
    let inside = |yz: &[f64]| yz.iter().zip(lo.iter().zip(&hi)).all(|(c, (a, b))| c - kappa >= a - 1e-9 && c + kappa <= b + 1e-9);
    let slopes: Vec<Vec<Vec<f64>>> = centers
        .iter()
        .map(|y| {
            // Nearest points of 2 kappa Z^d, preferring boxes inside the domain.
            let cands: Vec<Vec<f64>> = {
                let per_axis: Vec<Vec<f64>> = y
                    .iter()
                    .map(|&c| {
                        let m = c / (2.0 * kappa);
                        let (f, g) = (m.floor(), m.ceil());
                        let mut v = vec![f * 2.0 * kappa];
                        if g != f && (g - m) <= (m - f) + 1e-9 {
                            v.insert(0, g * 2.0 * kappa);
                        }
                        if (m - f) > (g - m) + 1e-9 {
                            v = vec![g * 2.0 * kappa];
                        }
                        v
                    })
                    .collect();
                let mut out = vec![vec![]];
                for axis in per_axis {
                    out = out
                        .into_iter()
                        .flat_map(|p: Vec<f64>| axis.iter().map(move |&a| [p.clone(), vec![a]].concat()))
                        .collect();
                }
                out
            };
            let yz = cands.iter().find(|c| inside(c)).cloned();
            block_ends
                .iter()
                .map(|&te| match &yz {
                    Some(c) => gradient_average(dom, hom, c, kappa, te - block, te),
                    None => vec![0.0; d],
                })
                .collect()
        })
        .collect();

    // Correctors.
    let micro_radius = (2.0 * (kappa / eps).floor()).max(1.0) as usize;
    let dt_micro = opts.dt_micro.unwrap_or_else(|| default_dt(d, v.c_plus()));
    let micro = TimeGrid::new(t0 / (eps * eps), t1 / (eps * eps), dt_micro)?;
    let slices = hom.n_slices();
    let stride = micro.steps / (slices - 1);
    if stride == 0 || stride * (slices - 1) != micro.steps {
        return invalid("homogenized slices are not aligned with the microscopic time grid");
    }
    let mut corrector_grids = Vec::with_capacity(centers.len());
    let mut correctors = Vec::with_capacity(centers.len());
    let mut site_maps = Vec::with_capacity(centers.len());
    for (c, y) in centers.iter().enumerate() {
        let lattice_center: Vec<i64> = y.iter().map(|v| (v / eps).round() as i64).collect();
        let grid = TorusGrid::centered(d, micro_radius, &lattice_center)?;
        let map: Vec<usize> = (0..dom.len())
            .map(|x| {
                let k = dom.lattice_coords(x);
                let off: Vec<i64> = k.iter().zip(&lattice_center).map(|(a, b)| a - b).collect();
                grid.site_at(&off)
            })
            .collect();
        let field = match noise {
            Some(src) => {
                let mut pieces = Vec::with_capacity(block_ends.len());
                let mut start = micro.s_minus;
                for (b, &te) in block_ends.iter().enumerate() {
                    pieces.push((start, slopes[c][b].clone()));
                    start = te / (eps * eps);
                }
                let path = SlopePath::new(pieces)?;
                run_corrector(&grid, &micro, &path, v, src, stride)?
            }
            None => SpaceTimeField::zeros(micro.s_minus, micro.dt * stride as f64, grid.len(), slices),
        };
        corrector_grids.push(grid);
        correctors.push(field);
        site_maps.push(map);
    }

    let block_of = |t: f64| block_ends.iter().position(|&te| t <= te + 1e-12).unwrap_or(block_ends.len() - 1);
    let mut field = SpaceTimeField::with_capacity(t0, hom.dt(), dom.len(), slices);
    let mut remainder = SpaceTimeField::with_capacity(t0, hom.dt(), dom.len() * d, slices);
    let mut w = vec![0.0; dom.len()];
    let mut r = vec![0.0; dom.len() * d];
    let mut g = vec![0.0; d];
    for j in 0..slices {
        let u = hom.slice(j);
        let b = block_of(hom.time(j));
        for x in 0..dom.len() {
            let mut acc = u[x];
            for &(c, chi) in &partition[x] {
                acc += eps * chi * correctors[c].slice(j)[site_maps[c][x]];
            }
            w[x] = acc;
        }
        r.iter_mut().for_each(|v| *v = 0.0);
        for &x in dom.interior() {
            crate::parabolic::vector_gradient(dom, u, x, &mut g);
            for i in 0..d {
                let xp = x + dom.stride(i);
                let mut acc = g[i];
                for &(c, chi) in &partition[xp] {
                    acc -= chi * slopes[c][b][i];
                }
                // Centers touching x or x + e_i.
                let mut seen: Vec<usize> = partition[x].iter().map(|e| e.0).collect();
                seen.extend(partition[xp].iter().map(|e| e.0));
                seen.sort_unstable();
                seen.dedup();
                for c in seen {
                    let chi = |s: usize| partition[s].iter().find(|e| e.0 == c).map_or(0.0, |e| e.1);
                    let phi = correctors[c].slice(j)[site_maps[c][x]];
                    acc += phi * (chi(xp) - chi(x));
                }
                r[x * d + i] = acc;
            }
        }
        field.push_slice(&w);
        remainder.push_slice(&r);
    }
    Ok(TwoScaleExpansion {
        dom: dom.clone(),
        kappa,
        centers,
        partition,
        block_ends,
        slopes,
        corrector_grids,
        correctors,
        site_maps,
        homogenized: hom.clone(),
        field,
        remainder,
        micro_radius,
    })
}

impl TwoScaleExpansion {
    pub fn chi(&self, center: usize, x: usize) -> f64 {
        self.partition[x].iter().find(|e| e.0 == center).map_or(0.0, |e| e.1)
    }

    pub fn block_of(&self, t: f64) -> usize {
        self.block_ends.iter().position(|&te| t <= te + 1e-12).unwrap_or(self.block_ends.len() - 1)
    }

    /// `phi_y(t_j / eps^2, x / eps)`.
    pub fn corrector_at(&self, center: usize, j: usize, x: usize) -> f64 {
        self.correctors[center].slice(j)[self.site_maps[center][x]]
    }

    /// `grad_i^eps v_y(t_j, x) = xi_{y,i} + phi_y(x + e_i) - phi_y(x)` in
    /// microscopic increments.
    pub fn local_gradient(&self, center: usize, j: usize, x: usize, i: usize) -> f64 {
        let b = self.block_of(self.homogenized.time(j));
        let xp = x + self.dom.stride(i);
        self.slopes[center][b][i] + self.corrector_at(center, j, xp) - self.corrector_at(center, j, x)
    }

    /// Macroscopic times of the mesoscopic cells `t0 + kappa^2 n`.
    pub fn cell_times(&self) -> Vec<f64> {
        let (t0, t1) = (self.homogenized.t0(), self.homogenized.t_end());
        let step = self.kappa * self.kappa;
        let mut out = Vec::new();
        let mut t = t0 + step;
        while t <= t1 + 1e-12 {
            out.push(t);
            t += step;
        }
        out
    }
}

/// The three summands of the error term of one mesoscopic cell.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorTerms {
    pub time: f64,
    pub center: Vec<f64>,
    /// `sum_{z'} ||grad u_hom - xi_{z'}||` on the cell.
    pub gradient: f64,
    /// `sum_{z'} |xi_z - xi_{z'}|`.
    pub slope: f64,
    /// `(eps / kappa) sum_{y'} ||phi_{y'}||` on the rescaled cell.
    pub corrector: f64,
    pub total: f64,
}

/// Error terms of the cell `z = (t, y)` with `t` among
/// [`TwoScaleExpansion::cell_times`] and `y` a center index; neighbors are
/// the cells with `|t - t'| <= kappa^2` and `|y - y'| <= kappa`.
pub fn error_terms(exp: &TwoScaleExpansion, t: f64, center: usize) -> ErrorTerms {
    let dom = &exp.dom;
    let d = dom.dim();
    let kappa = exp.kappa;
    let eps = dom.eps();
    let times = exp.cell_times();
    let y = &exp.centers[center];
    let near = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() <= kappa * (1.0 + 1e-9);
    let xi = |tz: f64, yz: &[f64]| gradient_average(dom, &exp.homogenized, yz, kappa, tz - 4.0 * kappa * kappa, tz);
    let xi_z = xi(t, y);
    let neighbors: Vec<(f64, usize)> = times
        .iter()
        .filter(|&&tt| (tt - t).abs() <= kappa * kappa * (1.0 + 1e-9))
        .flat_map(|&tt| (0..exp.centers.len()).filter(|&c| near(&exp.centers[c], y)).map(move |c| (tt, c)))
        .collect();
    // Sites and slices of z + Q_kappa.
    let sites: Vec<usize> = dom
        .interior()
        .iter()
        .copied()
        .filter(|&x| dom.position(x).iter().zip(y).all(|(a, c)| (a - c).abs() <= kappa / 2.0 + 1e-12))
        .collect();
    let weights = slice_weights(&exp.homogenized, t - kappa * kappa, t);
    let mut g = vec![0.0; d];
    let mut gradient = 0.0;
    let mut slope = 0.0;
    for &(tt, c) in &neighbors {
        let xi_n = xi(tt, &exp.centers[c]);
        slope += xi_z.iter().zip(&xi_n).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let mut acc = 0.0;
        for &(j, w) in &weights {
            let s = exp.homogenized.slice(j);
            for &x in &sites {
                crate::parabolic::vector_gradient(dom, s, x, &mut g);
                acc += w * g.iter().zip(&xi_n).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / sites.len().max(1) as f64;
            }
        }
        gradient += acc.sqrt();
    }
    // Correctors of neighboring centers on z / eps + Q_L.
    let l_micro = (kappa / eps).floor().max(1.0);
    let half = ((l_micro / 2.0).floor() as i64).max(1);
    let t_micro = t / (eps * eps);
    let mut corrector = 0.0;
    for c in (0..exp.centers.len()).filter(|&c| near(&exp.centers[c], y)) {
        let grid = &exp.corrector_grids[c];
        let field = &exp.correctors[c];
        let lc: Vec<i64> = exp.centers[c].iter().map(|v| (v / eps).round() as i64).collect();
        let base: Vec<i64> = y.iter().zip(&lc).map(|(v, l)| (v / eps).round() as i64 - l).collect();
        let box_sites = grid.box_sites(&base, half as usize).unwrap_or_default();
        let w = slice_weights(field, t_micro - l_micro * l_micro, t_micro);
        let mut acc = 0.0;
        for &(j, wt) in &w {
            let s = field.slice(j);
            acc += wt * box_sites.iter().map(|&x| s[x] * s[x]).sum::<f64>() / box_sites.len().max(1) as f64;
        }
        corrector += acc.sqrt();
    }
    corrector *= eps / kappa;
    ErrorTerms { time: t, center: y.clone(), gradient, slope, corrector, total: gradient + slope + corrector }
}

/// `(1 / |Z|) sum_z E_z^2` over every mesoscopic cell.
pub fn aggregate_error(exp: &TwoScaleExpansion) -> f64 {
    let times = exp.cell_times();
    let mut acc = 0.0;
    let mut n = 0usize;
    for &t in &times {
        for c in 0..exp.centers.len() {
            acc += error_terms(exp, t, c).total.powi(2);
            n += 1;
        }
    }
    acc / n.max(1) as f64
}

/// Multiscale upper estimate of the parabolic `H^-1` norm of a field on the
/// interior of a Dirichlet domain:
/// `eps ||f|| + sum_k r_k (sum_cells |cell| / |Q| (f)_cell^2)^{1/2}` with
/// dyadic cells of side `r_k = eps 2^k` and duration `r_k^2`.
pub fn multiscale_dual_estimate(f: &SpaceTimeField, dom: &DirichletDomain) -> Result<f64> {
    if f.width() != dom.len() || f.n_slices() < 2 {
        return invalid("field does not match the domain");
    }
    let eps = dom.eps();
    let d = dom.dim();
    let weights = crate::lattice::trapezoid_weights(0, f.n_slices() - 1);
    let interior = dom.interior();
    let count = interior.len() as f64;
    let mut l2 = 0.0;
    for &(j, w) in &weights {
        let s = f.slice(j);
        l2 += w * interior.iter().map(|&x| s[x] * s[x]).sum::<f64>() / count;
    }
    let mut value = eps * l2.sqrt();
    let coords: Vec<Vec<i64>> = interior.iter().map(|&x| dom.lattice_coords(x)).collect();
    let lo: Vec<i64> = (0..d).map(|i| coords.iter().map(|c| c[i]).min().unwrap()).collect();
    let extent: Vec<i64> = (0..d).map(|i| coords.iter().map(|c| c[i]).max().unwrap() - lo[i] + 1).collect();
    let max_extent = *extent.iter().max().unwrap();
    let duration = f.t_end() - f.t0();
    let mut k = 0u32;
    while (1i64 << k) <= max_extent {
        let side = 1i64 << k;
        let r = eps * side as f64;
        let per_axis: Vec<i64> = extent.iter().map(|e| (e + side - 1) / side).collect();
        let spatial_cells: usize = per_axis.iter().product::<i64>() as usize;
        let time_cells = ((duration / (r * r)).ceil() as usize).max(1);
        let mut sums = vec![0.0; spatial_cells * time_cells];
        let mut mass = vec![0.0; spatial_cells * time_cells];
        for &(j, w) in &weights {
            let tc = (((f.time(j) - f.t0()) / (r * r)) as usize).min(time_cells - 1);
            let s = f.slice(j);
            for (n, &x) in interior.iter().enumerate() {
                let mut cell = 0usize;
                for i in 0..d {
                    cell = cell * per_axis[i] as usize + ((coords[n][i] - lo[i]) / side) as usize;
                }
                let idx = tc * spatial_cells + cell;
                sums[idx] += w * s[x];
                mass[idx] += w;
            }
        }
        let total: f64 = mass.iter().sum();
        let mut acc = 0.0;
        for (s, m) in sums.iter().zip(&mass) {
            if *m > 0.0 {
                acc += (m / total) * (s / m).powi(2);
            }
        }
        value += r * acc.sqrt();
        k += 1;
    }
    Ok(value)
}

/// The field `sum_y grad chi_y . (V'(grad v_y) - D sigma(xi_y))` at interior
/// sites, per homogenized slice.
pub fn flux_error_field(exp: &TwoScaleExpansion, v: &Potential, dsigma: &EffectiveGradient) -> SpaceTimeField {
    let dom = &exp.dom;
    let d = dom.dim();
    let eps = dom.eps();
    let slices = exp.homogenized.n_slices();
    let mut out = SpaceTimeField::with_capacity(exp.homogenized.t0(), exp.homogenized.dt(), dom.len(), slices);
    let mut ds = vec![0.0; d];
    let mut buf = vec![0.0; dom.len()];
    for j in 0..slices {
        let b = exp.block_of(exp.homogenized.time(j));
        buf.iter_mut().for_each(|x| *x = 0.0);
        for &x in dom.interior() {
            let mut acc = 0.0;
            let mut seen: Vec<usize> = exp.partition[x].iter().map(|e| e.0).collect();
            for i in 0..d {
                seen.extend(exp.partition[x + dom.stride(i)].iter().map(|e| e.0));
            }
            seen.sort_unstable();
            seen.dedup();
            for c in seen {
                dsigma.eval(&exp.slopes[c][b], &mut ds);
                for i in 0..d {
                    let grad_chi = (exp.chi(c, x + dom.stride(i)) - exp.chi(c, x)) / eps;
                    if grad_chi != 0.0 {
                        acc += grad_chi * (v.dv(exp.local_gradient(c, j, x, i)) - ds[i]);
                    }
                }
            }
            buf[x] = acc;
        }
        out.push_slice(&buf);
    }
    out
}

/// Multiscale estimate of the parabolic `H^-1` norm of [`flux_error_field`].
pub fn flux_weak_norm(exp: &TwoScaleExpansion, v: &Potential, dsigma: &EffectiveGradient) -> Result<f64> {
    multiscale_dual_estimate(&flux_error_field(exp, v, dsigma), &exp.dom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::SiteKind;
    use crate::parabolic::solve_homogenized;

    fn homogenized(dom: &DirichletDomain, f: &dyn crate::dynamics::BoundaryData, t1: f64) -> SpaceTimeField {
        let eps = dom.eps();
        let dt = eps * eps / 16.0;
        let steps = (t1 / dt).round() as usize;
        let stride = 16;
        let mut out = SpaceTimeField::with_capacity(0.0, dt * stride as f64, dom.len(), steps / stride + 1);
        solve_homogenized(&EffectiveGradient::Identity, dom, f, 0.0, t1, dt, &mut |j: usize, _t: f64, u: &[f64]| {
            if j % stride == 0 {
                out.push_slice(u);
            }
        })
        .unwrap();
        out
    }

    fn sine(t: f64, x: &[f64]) -> f64 {
        (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin() * t.exp()
    }

    #[test]
    fn zero_correctors_reproduce_homogenized_solution() {
        let dom = DirichletDomain::unit_cube(2, 8).unwrap();
        let hom = homogenized(&dom, &sine, 0.0625);
        let opts = TwoScaleOptions { kappa: mesoscale(dom.eps(), 2, false), dt_micro: Some(1.0 / 16.0) };
        let exp = build_two_scale(&dom, &hom, &Potential::quadratic(), None, &opts).unwrap();
        assert_eq!(exp.field.data(), hom.data());
        for x in 0..dom.len() {
            let s: f64 = exp.partition[x].iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_identity_holds_with_correctors() {
        let dom = DirichletDomain::unit_cube(2, 16).unwrap();
        let hom = homogenized(&dom, &sine, 0.125);
        let v = Potential::soft_quartic(0.5).unwrap();
        let opts = TwoScaleOptions { kappa: 0.25, dt_micro: Some(1.0 / 24.0) };
        let src = NoiseSource::new(5, 0);
        let exp = build_two_scale(&dom, &hom, &v, Some(&src), &opts).unwrap();
        assert_eq!(exp.centers.len(), 9);
        let d = 2;
        let eps = dom.eps();
        let mut worst: f64 = 0.0;
        for j in [0, 3, hom.n_slices() - 1] {
            let w = exp.field.slice(j);
            for &x in dom.interior() {
                for i in 0..d {
                    let xp = x + dom.stride(i);
                    let grad_w = (w[xp] - w[x]) / eps;
                    let mut assembled = 0.0;
                    for c in 0..exp.centers.len() {
                        let chi = exp.chi(c, xp);
                        if chi != 0.0 {
                            assembled += chi * exp.local_gradient(c, j, x, i);
                        }
                    }
                    let r = exp.remainder.slice(j)[x * d + i];
                    worst = worst.max((grad_w - assembled - r).abs());
                }
            }
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn error_terms_vanish_for_affine_data() {
        let dom = DirichletDomain::unit_cube(2, 16).unwrap();
        let affine = |_t: f64, x: &[f64]| 0.4 * x[0] - 0.2 * x[1];
        let hom = homogenized(&dom, &affine, 0.125);
        let opts = TwoScaleOptions { kappa: 0.25, dt_micro: Some(1.0 / 16.0) };
        let exp = build_two_scale(&dom, &hom, &Potential::quadratic(), None, &opts).unwrap();
        let t = exp.cell_times()[1];
        let e = error_terms(&exp, t, 4);
        assert!(e.gradient < 1e-10 && e.slope < 1e-10 && e.corrector == 0.0, "{e:?}");
        let f = flux_weak_norm(&exp, &Potential::quadratic(), &EffectiveGradient::Identity).unwrap();
        assert!(f < 1e-12);
        let f = flux_weak_norm(&exp, &Potential::soft_quartic(0.5).unwrap(), &EffectiveGradient::Identity).unwrap();
        assert!(f < 1e-10, "{f}");
    }

    #[test]
    fn dual_estimate_is_bounded_by_l2_norm() {
        let dom = DirichletDomain::unit_cube(2, 8).unwrap();
        let src = NoiseSource::new(9, 0);
        let data: Vec<Vec<f64>> = (0..9)
            .map(|j| (0..dom.len()).map(|x| if dom.kind(x) == SiteKind::Interior { src.normal(crate::noise::Stream::Auxiliary, x as u64, j) } else { 0.0 }).collect())
            .collect();
        let f = SpaceTimeField::from_slices(0.0, 1.0 / 64.0, data);
        let value = multiscale_dual_estimate(&f, &dom).unwrap();
        let weights = crate::lattice::trapezoid_weights(0, 8);
        let l2: f64 = weights
            .iter()
            .map(|&(j, w)| w * dom.interior().iter().map(|&x| f.slice(j)[x].powi(2)).sum::<f64>() / dom.interior().len() as f64)
            .sum::<f64>()
            .sqrt();
        let eps = dom.eps();
        let bound = (eps + (0..3).map(|k| eps * (1 << k) as f64).sum::<f64>()) * l2;
        assert!(value <= bound + 1e-12 && value > 0.0);
    }
}
