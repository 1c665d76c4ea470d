//! Space-time norms used as measurement instruments.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::lattice::{cylinder_average, partition_cells, ParabolicCylinder, SpaceTimeField, TorusGrid};

/// A measured norm together with what it was measured on.
#[derive(Debug, Clone, Serialize)]
pub struct NormReport {
    pub name: String,
    pub cylinder: String,
    pub value: f64,
    pub normalized: bool,
}

fn describe(q: &ParabolicCylinder) -> String {
    match q.radius {
        Some(r) => format!("({}, {}) x box(center {:?}, radius {r})", q.s_minus, q.s_plus, q.center),
        None => format!("({}, {}) x torus", q.s_minus, q.s_plus),
    }
}

impl NormReport {
    pub fn lp(f: &SpaceTimeField, grid: &TorusGrid, q: &ParabolicCylinder, p: f64, normalized: bool) -> Result<Self> {
        Ok(Self {
            name: if p.is_infinite() { "L^inf".into() } else { format!("L^{p}") },
            cylinder: describe(q),
            value: lp_norm(f, grid, q, p, normalized)?,
            normalized,
        })
    }
}

/// `(int_I sum_x |f|^p dt)^(1/p)`, time integral by the trapezoid rule; the
/// normalized version divides by `|Q|` before taking the root.
pub fn lp_norm(f: &SpaceTimeField, grid: &TorusGrid, q: &ParabolicCylinder, p: f64, normalized: bool) -> Result<f64> {
    if !(p >= 1.0) {
        return invalid(format!("L^p norm needs p >= 1, got {p}"));
    }
    let sites = q.sites(grid)?;
    let weights = f.time_weights(q.s_minus, q.s_plus)?;
    if p.is_infinite() {
        let mut m: f64 = 0.0;
        for (j, _) in weights {
            let s = f.slice(j);
            for &x in &sites {
                m = m.max(s[x].abs());
            }
        }
        return Ok(m);
    }
    let span = (weights.len() - 1) as f64 * f.dt();
    let mut acc = 0.0;
    for (j, w) in weights {
        let s = f.slice(j);
        acc += w * sites.iter().map(|&x| s[x].abs().powf(p)).sum::<f64>();
    }
    // `acc` is the time average; multiply back to an integral.
    let integral = acc * span;
    let total = if normalized { integral / (span * sites.len() as f64) } else { integral };
    Ok(total.powf(1.0 / p))
}

/// Parabolic Holder seminorm by exhaustive comparison of all point pairs,
/// with Euclidean distances between box offsets.
pub fn holder_seminorm(f: &SpaceTimeField, grid: &TorusGrid, q: &ParabolicCylinder, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("Holder exponent must lie in (0, 1], got {alpha}"));
    }
    let sites = q.sites(grid)?;
    let r = q.radius.unwrap_or(grid.radius()) as i64;
    let width = 2 * r + 1;
    let d = grid.dim();
    // Offsets within the box, in the order produced by `box_sites`.
    let offsets: Vec<Vec<f64>> = (0..sites.len())
        .map(|k| {
            let mut rem = k as i64;
            let mut o = vec![0.0; d];
            for axis in (0..d).rev() {
                o[axis] = (rem % width - r) as f64;
                rem /= width;
            }
            o
        })
        .collect();
    let weights = f.time_weights(q.s_minus, q.s_plus)?;
    let points: Vec<(f64, usize, f64)> = weights
        .iter()
        .flat_map(|&(j, _)| {
            let s = f.slice(j);
            let t = f.time(j);
            sites.iter().enumerate().map(move |(k, &x)| (t, k, s[x]))
        })
        .collect();
    let mut best: f64 = 0.0;
    for (a, &(t, k, u)) in points.iter().enumerate() {
        for &(s, l, w) in &points[a + 1..] {
            let diff = (u - w).abs();
            if diff == 0.0 {
                continue;
            }
            let dx2: f64 = offsets[k].iter().zip(&offsets[l]).map(|(p, q)| (p - q).powi(2)).sum();
            let denom = (t - s).abs().powf(alpha / 2.0) + dx2.sqrt().powf(alpha);
            if denom > 0.0 {
                best = best.max(diff / denom);
            }
        }
    }
    Ok(best)
}

/// Multiscale upper estimate of the parabolic `H^-1` norm of `f` on the
/// triadic cylinder of side `3^m` (prefactor 1):
/// `||f||_{L^2 avg} + sum_{k=0}^m 3^k (mean over cells of side 3^k of (f)_cell^2)^(1/2)`.
pub fn hminus1_par_multiscale(f: &SpaceTimeField, grid: &TorusGrid, m: i32) -> Result<f64> {
    if m < 0 {
        return invalid("scale exponent must be nonnegative");
    }
    let m = m as u32;
    let d = grid.dim();
    let q = ParabolicCylinder::triadic(d, m)?;
    let mut total = lp_norm(f, grid, &q, 2.0, true)?;
    for k in 0..=m {
        let cells = partition_cells(d, k, m)?;
        let mut ms = 0.0;
        for c in &cells {
            ms += cylinder_average(f, grid, c)?.powi(2);
        }
        total += 3f64.powi(k as i32) * (ms / cells.len() as f64).sqrt();
    }
    Ok(total)
}

/// Result of the dual-norm solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualNorm {
    pub value: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// The spatial and temporal pieces of the Hilbert `H^1_par` norm on a
/// cylinder: `B = I / side^2 + K` with `K` the Dirichlet (or, on the full
/// torus, periodic) graph Laplacian, and the time step of the field.
#[derive(Debug, Clone)]
pub struct ParabolicEnergy {
    pub spatial: DMatrix<f64>,
    pub slices: usize,
    pub dt: f64,
}

impl ParabolicEnergy {
    pub fn new(grid: &TorusGrid, q: &ParabolicCylinder, dt: f64, slices: usize) -> Result<Self> {
        let sites = q.sites(grid)?;
        let n = sites.len();
        let side = match q.radius {
            Some(r) => 2 * r + 1,
            None => grid.side(),
        } as f64;
        let mut b = DMatrix::<f64>::zeros(n, n);
        let mut position = std::collections::HashMap::with_capacity(n);
        for (k, &x) in sites.iter().enumerate() {
            position.insert(x, k);
        }
        for (k, &x) in sites.iter().enumerate() {
            b[(k, k)] += 1.0 / (side * side);
            for axis in 0..grid.dim() {
                for y in [grid.plus(x, axis), grid.minus(x, axis)] {
                    b[(k, k)] += 1.0;
                    if let Some(&l) = position.get(&y) {
                        b[(k, l)] -= 1.0;
                    }
                }
            }
        }
        Ok(Self { spatial: b, slices, dt })
    }

    /// Dense assembly of the full space-time matrix; intended for small
    /// instances and cross-checks.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.spatial.nrows();
        let nt = self.slices;
        let binv = self
            .spatial
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("spatial energy matrix is not positive definite".into()))?
            .inverse();
        let mut a = DMatrix::<f64>::zeros(n * nt, n * nt);
        let c = 1.0 / (self.dt * self.dt);
        for j in 0..nt {
            let mut diag = a.view_mut((j * n, j * n), (n, n));
            diag += &self.spatial;
            // (v_j - v_{j-1})^T B^-1 (v_j - v_{j-1}) contributions.
            diag += &binv * c;
            if j > 0 {
                let mut prev = a.view_mut(((j - 1) * n, (j - 1) * n), (n, n));
                prev += &binv * c;
                let mut lower = a.view_mut((j * n, (j - 1) * n), (n, n));
                lower -= &binv * c;
                let mut upper = a.view_mut(((j - 1) * n, j * n), (n, n));
                upper -= &binv * c;
            }
        }
        Ok(a)
    }
}

/// Largest number of space-time unknowns accepted by [`hminus1_par_exact`].
pub const MAX_DUAL_UNKNOWNS: usize = 10_000;

/// Parabolic `H^-1` norm of `f` on `q` as the dual of the Hilbert version of
/// the `H^1_par` norm over test functions vanishing at the initial time and
/// outside the box:
/// `sup { (1/|Q|) int sum f v : |v|_{H^1_par} <= 1 } = sqrt(f^T A^-1 f / N)`,
/// with `A` the discrete energy, `N` the number of unknowns, and the linear
/// system solved by conjugate gradients.
pub fn hminus1_par_exact(f: &SpaceTimeField, grid: &TorusGrid, q: &ParabolicCylinder) -> Result<DualNorm> {
    hminus1_par_exact_with(f, grid, q, 1e-10, 20_000)
}

pub fn hminus1_par_exact_with(
    f: &SpaceTimeField,
    grid: &TorusGrid,
    q: &ParabolicCylinder,
    tol: f64,
    max_iter: usize,
) -> Result<DualNorm> {
    let sites = q.sites(grid)?;
    let weights = f.time_weights(q.s_minus, q.s_plus)?;
    let j0 = weights[0].0;
    let nt = weights.len() - 1;
    let n = sites.len();
    if n * nt > MAX_DUAL_UNKNOWNS {
        return invalid(format!("dual norm limited to {MAX_DUAL_UNKNOWNS} unknowns, got {}", n * nt));
    }
    let energy = ParabolicEnergy::new(grid, q, f.dt(), nt)?;
    let chol = energy
        .spatial
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("spatial energy matrix is not positive definite".into()))?;
    let mut rhs = DVector::<f64>::zeros(n * nt);
    for j in 0..nt {
        let s = f.slice(j0 + 1 + j);
        for (k, &x) in sites.iter().enumerate() {
            rhs[j * n + k] = s[x];
        }
    }
    let c = 1.0 / (f.dt() * f.dt());
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::<f64>::zeros(n * nt);
        let mut prev = DVector::<f64>::zeros(n);
        let mut diffs = Vec::with_capacity(nt);
        for j in 0..nt {
            let vj = v.rows(j * n, n).into_owned();
            out.rows_mut(j * n, n).copy_from(&(&energy.spatial * &vj));
            diffs.push(chol.solve(&(&vj - &prev)) * c);
            prev = vj;
        }
        for j in 0..nt {
            let mut block = out.rows(j * n, n).into_owned();
            block += &diffs[j];
            if j + 1 < nt {
                block -= &diffs[j + 1];
            }
            out.rows_mut(j * n, n).copy_from(&block);
        }
        out
    };
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(DualNorm { value: 0.0, iterations: 0, relative_residual: 0.0, converged: true });
    }
    let mut x = DVector::<f64>::zeros(n * nt);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > tol * rhs_norm {
        let ap = apply(&p);
        let alpha = rr / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
        iterations += 1;
    }
    let relative_residual = rr.sqrt() / rhs_norm;
    let total = (n * nt) as f64;
    Ok(DualNorm {
        value: (rhs.dot(&x).max(0.0) / total).sqrt(),
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseSource, Stream};
    use proptest::prelude::*;

    fn field_on(grid: &TorusGrid, t0: f64, dt: f64, slices: usize, f: impl Fn(f64, &[i64]) -> f64) -> SpaceTimeField {
        let data: Vec<Vec<f64>> = (0..slices)
            .map(|j| {
                let t = t0 + j as f64 * dt;
                (0..grid.len()).map(|x| f(t, &grid.offsets(x))).collect()
            })
            .collect();
        SpaceTimeField::from_slices(t0, dt, data)
    }

    #[test]
    fn lp_examples() {
        let g = TorusGrid::new(2, 2).unwrap();
        let q = ParabolicCylinder::full(2, 0.0, 1.0).unwrap();
        let zero = field_on(&g, 0.0, 0.25, 5, |_, _| 0.0);
        assert_eq!(lp_norm(&zero, &g, &q, 2.0, false).unwrap(), 0.0);
        let c = field_on(&g, 0.0, 0.25, 5, |_, _| -1.7);
        for p in [1.0, 2.0, 3.5, f64::INFINITY] {
            assert!((lp_norm(&c, &g, &q, p, true).unwrap() - 1.7).abs() < 1e-14);
        }
        let spike = field_on(&g, 0.0, 0.25, 5, |_, x| if x == [0, 0] { 1.0 } else { 0.0 });
        assert!((lp_norm(&spike, &g, &q, 2.0, false).unwrap() - 1.0).abs() < 1e-15);
        assert!(lp_norm(&spike, &g, &q, 0.5, false).is_err());
    }

    #[test]
    fn holder_examples() {
        let g = TorusGrid::new(2, 2).unwrap();
        let q = ParabolicCylinder::new(0.0, 1.0, vec![0, 0], Some(2)).unwrap();
        let c = field_on(&g, 0.0, 0.5, 3, |_, _| 4.0);
        assert_eq!(holder_seminorm(&c, &g, &q, 0.5).unwrap(), 0.0);
        let lin = field_on(&g, 0.0, 0.5, 3, |_, x| x[0] as f64);
        assert!((holder_seminorm(&lin, &g, &q, 1.0).unwrap() - 1.0).abs() < 1e-14);
        let time = field_on(&g, 0.0, 0.25, 5, |t, _| t);
        assert!((holder_seminorm(&time, &g, &q, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(holder_seminorm(&time, &g, &q, 1.5).is_err());
    }

    #[test]
    fn multiscale_examples() {
        let g = TorusGrid::new(2, 4).unwrap();
        let zero = field_on(&g, -9.0, 1.0, 10, |_, _| 0.0);
        assert_eq!(hminus1_par_multiscale(&zero, &g, 1).unwrap(), 0.0);
        let one = field_on(&g, -9.0, 1.0, 10, |_, _| 1.0);
        assert!((hminus1_par_multiscale(&one, &g, 1).unwrap() - 5.0).abs() < 1e-12);
        assert!(hminus1_par_multiscale(&one, &g, -1).is_err());
    }

    #[test]
    fn multiscale_random_signs_below_constant() {
        let g = TorusGrid::new(2, 4).unwrap();
        let one = field_on(&g, -81.0, 1.0, 82, |_, _| 1.0);
        let reference = hminus1_par_multiscale(&one, &g, 2).unwrap();
        for seed in 0..20u64 {
            let src = NoiseSource::new(seed, 0);
            let f = field_on(&g, -81.0, 1.0, 82, |t, x| {
                let key = crate::noise::site_key(x);
                if src.normal(Stream::Auxiliary, key, (t + 81.0) as u64) > 0.0 { 1.0 } else { -1.0 }
            });
            assert!(hminus1_par_multiscale(&f, &g, 2).unwrap() < reference);
        }
    }

    #[test]
    fn dual_norm_of_zero() {
        let g = TorusGrid::new(2, 2).unwrap();
        let q = ParabolicCylinder::new(-3.0, 0.0, vec![0, 0], Some(1)).unwrap();
        let zero = field_on(&g, -3.0, 1.0, 4, |_, _| 0.0);
        assert_eq!(hminus1_par_exact(&zero, &g, &q).unwrap().value, 0.0);
    }

    #[test]
    fn dual_norm_matches_dense_solve() {
        let g = TorusGrid::new(2, 2).unwrap();
        let q = ParabolicCylinder::new(-3.0, 0.0, vec![0, 0], Some(1)).unwrap();
        let spike = field_on(&g, -3.0, 1.0, 4, |t, x| if t == -1.0 && x == [0, 0] { 1.0 } else { 0.0 });
        let got = hminus1_par_exact(&spike, &g, &q).unwrap();
        assert!(got.converged);
        // Independent oracle: explicit block assembly and LU solve.
        let n = 9;
        let nt = 3;
        let mut b = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let (i, j) = ((k / 3) as i64, (k % 3) as i64);
            b[(k, k)] = 4.0 + 1.0 / 9.0;
            for l in 0..n {
                let (a, c) = ((l / 3) as i64, (l % 3) as i64);
                if (i - a).abs() + (j - c).abs() == 1 {
                    b[(k, l)] = -1.0;
                }
            }
        }
        let binv = b.clone().lu().try_inverse().unwrap();
        let mut a = DMatrix::<f64>::zeros(n * nt, n * nt);
        // Time-difference operator with v_0 = 0.
        let mut diff = DMatrix::<f64>::zeros(n * nt, n * nt);
        for j in 0..nt {
            for k in 0..n {
                diff[(j * n + k, j * n + k)] = 1.0;
                if j > 0 {
                    diff[(j * n + k, (j - 1) * n + k)] = -1.0;
                }
            }
        }
        let mut bbig = DMatrix::<f64>::zeros(n * nt, n * nt);
        let mut binvbig = DMatrix::<f64>::zeros(n * nt, n * nt);
        for j in 0..nt {
            bbig.view_mut((j * n, j * n), (n, n)).copy_from(&b);
            binvbig.view_mut((j * n, j * n), (n, n)).copy_from(&binv);
        }
        a += &bbig;
        a += diff.transpose() * &binvbig * &diff;
        let mut rhs = DVector::<f64>::zeros(n * nt);
        rhs[n + 4] = 1.0;
        let sol = a.lu().solve(&rhs).unwrap();
        let oracle = (rhs.dot(&sol) / (n * nt) as f64).sqrt();
        assert!((got.value - oracle).abs() <= 1e-6 * oracle, "{} vs {oracle}", got.value);
        let energy = ParabolicEnergy::new(&g, &q, 1.0, nt).unwrap();
        let dense = energy.dense().unwrap();
        let sol2 = dense.lu().solve(&rhs).unwrap();
        assert!(((rhs.dot(&sol2) / 27.0).sqrt() - oracle).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lp_is_homogeneous(c in -5.0f64..5.0, seed in 0u64..1000) {
            let g = TorusGrid::new(2, 2).unwrap();
            let q = ParabolicCylinder::full(2, 0.0, 1.0).unwrap();
            let src = NoiseSource::new(seed, 0);
            let f = field_on(&g, 0.0, 0.25, 5, |t, x| src.normal(Stream::Auxiliary, crate::noise::site_key(x), (4.0 * t) as u64));
            let cf = field_on(&g, 0.0, 0.25, 5, |t, x| c * src.normal(Stream::Auxiliary, crate::noise::site_key(x), (4.0 * t) as u64));
            for p in [1.0, 2.0, 3.0] {
                let a = lp_norm(&cf, &g, &q, p, false).unwrap();
                let b = c.abs() * lp_norm(&f, &g, &q, p, false).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
            }
        }

        #[test]
        fn dual_norm_sanity_bound(seed in 0u64..1000) {
            let g = TorusGrid::new(2, 3).unwrap();
            let q = ParabolicCylinder::new(-4.0, 0.0, vec![0, 0], Some(2)).unwrap();
            let src = NoiseSource::new(seed, 1);
            let f = field_on(&g, -4.0, 1.0, 5, |t, x| src.normal(Stream::Auxiliary, crate::noise::site_key(x), (t + 4.0) as u64));
            let dual = hminus1_par_exact(&f, &g, &q).unwrap();
            prop_assert!(dual.converged);
            let l2 = lp_norm(&f, &g, &q, 2.0, true).unwrap();
            prop_assert!(dual.value <= l2 * (4.0 + 5.0));
        }
    }
}
