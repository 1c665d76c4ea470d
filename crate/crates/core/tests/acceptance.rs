//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr and
//! then asserts.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use gradphi::dynamics::{run_corrector, SlopePath, TimeGrid};
use gradphi::harness::{
    gff_experiment, hydro_limit_experiment, run_with_threads, BoundaryDatum, EffectiveGradientSpec, ExperimentConfig,
    GffParams, HydroParams,
};
use gradphi::homogenize::{
    corrector_fluctuation_experiment, estimate_hessian, estimate_tau, excess_experiment, flux_decay_experiment,
    linearization_modulus, EstimatorOptions, TauSlope,
};
use gradphi::lattice::{DirichletDomain, EdgeField, ParabolicCylinder, SpaceTimeField, TorusGrid};
use gradphi::noise::{site_key, NoiseSource, Stream};
use gradphi::norms::{hminus1_par_exact, hminus1_par_multiscale};
use gradphi::occupation::{occupation_experiment, ProcessSpec};
use gradphi::parabolic::{
    duhamel_solve, heat_kernel, homogenized_operator, solve_linearized_corrector, step_with_source, EffectiveGradient,
    Environment,
};
use gradphi::potential::{lusin_measure, Potential, PotentialSpec};

/// Writes straight to the stderr handle, which the test harness does not
/// capture, so the verdicts appear without `--nocapture`.
fn verdict(id: u32, name: &str, passed: bool, detail: &str) {
    let line = format!("{} [{id:>2}] {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

fn random_field(src: &NoiseSource, len: usize, index: u64) -> Vec<f64> {
    (0..len).map(|x| src.normal(Stream::Auxiliary, x as u64, index)).collect()
}

fn random_edges(src: &NoiseSource, grid: &TorusGrid, lo: f64, hi: f64) -> EdgeField {
    let vals = random_field(src, grid.len() * grid.dim(), 7)
        .into_iter()
        .map(|z| lo + (hi - lo) * 0.5 * (1.0 + z.tanh()))
        .collect();
    EdgeField::from_values(grid.dim(), vals)
}

fn eigenvalue(k: &[i64], side: usize) -> f64 {
    k.iter().map(|&c| 2.0 - 2.0 * (2.0 * PI * c as f64 / side as f64).cos()).sum()
}

fn unflatten(idx: usize, side: usize, dim: usize) -> Vec<i64> {
    let mut out = vec![0i64; dim];
    let mut rem = idx;
    for axis in (0..dim).rev() {
        out[axis] = (rem % side) as i64;
        rem /= side;
    }
    out
}

#[test]
fn exact_oracle_suite() {
    let src = NoiseSource::new(101, 0);
    let mut worst = [0.0f64; 6];

    // Duhamel assembly against direct stepping, d = 2, L = 2.
    let grid = TorusGrid::new(2, 2).unwrap();
    let env = Environment::Static(random_edges(&src, &grid, 0.5, 1.5));
    let dt = 0.02;
    let slices: Vec<Vec<f64>> = (0..21)
        .map(|j| {
            let mut f = random_field(&src, grid.len(), 100 + j);
            let m = f.iter().sum::<f64>() / f.len() as f64;
            f.iter_mut().for_each(|x| *x -= m);
            f
        })
        .collect();
    let forcing = SpaceTimeField::from_slices(0.0, dt, slices);
    let a = duhamel_solve(&grid, &env, &forcing).unwrap();
    let b = step_with_source(&grid, &env, &forcing).unwrap();
    worst[0] = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    // Heat kernel with a = 1 against the discrete-time spectral sum, L = 4.
    let grid = TorusGrid::new(2, 4).unwrap();
    let n = grid.side();
    let total = grid.len();
    let y = grid.site_at(&[1, -2]);
    let dt = 0.05;
    let table = heat_kernel(&grid, &Environment::Constant(1.0), 0.0, y, 4.0, dt).unwrap();
    let ky = grid.offsets(y);
    for (step, slice) in table.field.slices().enumerate().step_by(5) {
        for x in 0..total {
            let ox = grid.offsets(x);
            let mut acc = 0.0;
            for idx in 1..total {
                let k = unflatten(idx, n, 2);
                let phase = 2.0 * PI / n as f64 * k.iter().zip(ox.iter().zip(&ky)).map(|(a, (b, c))| (a * (b - c)) as f64).sum::<f64>();
                acc += (1.0 - dt * eigenvalue(&k, n)).powi(step as i32) * phase.cos();
            }
            worst[1] = worst[1].max((slice[x] - acc / total as f64).abs());
        }
    }

    // Mass conservation of the heat kernel in a random environment.
    let grid = TorusGrid::new(2, 3).unwrap();
    let env = Environment::Static(random_edges(&src, &grid, 0.3, 2.0));
    let table = heat_kernel(&grid, &env, 0.0, 5, 9.0, 0.02).unwrap();
    worst[2] = table.field.slices().map(|s| s.iter().sum::<f64>().abs()).fold(0.0, f64::max);

    // Summation by parts on the torus and for the homogenized operator.
    for l in 1..=4 {
        let grid = TorusGrid::new(2, l).unwrap();
        let u = random_field(&src, grid.len(), 200 + l as u64);
        let g = EdgeField::from_values(2, random_field(&src, 2 * grid.len(), 300 + l as u64));
        let lhs: f64 = grid.divergence_field(&g).iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = grid.gradient(&u).values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
        worst[3] = worst[3].max((lhs + rhs).abs());
    }
    let dom = DirichletDomain::unit_cube(2, 12).unwrap();
    let nodes: Vec<f64> = (0..=200).map(|k| 0.05 * k as f64).collect();
    let values: Vec<f64> = nodes.iter().map(|s| s + 0.3 * s.sin()).collect();
    let dsigma = EffectiveGradient::tabulated(nodes, values).unwrap();
    let inside = |idx: usize| dom.position(idx).iter().all(|&p| p > 0.2 && p < 0.8);
    let compact = |index: u64| -> Vec<f64> {
        (0..dom.len()).map(|i| if inside(i) { 0.1 * src.normal(Stream::Auxiliary, i as u64, index) } else { 0.0 }).collect()
    };
    let (u, v) = (compact(400), compact(401));
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for &x in dom.interior() {
        lhs -= homogenized_operator(&dsigma, &dom, &u, x).0 * v[x];
        let mut gx = [0.0; 2];
        let grad_u = [0, 1].map(|i| (u[x + dom.stride(i)] - u[x]) / dom.eps());
        dsigma.eval(&grad_u, &mut gx);
        for i in 0..2 {
            rhs += gx[i] * (v[x + dom.stride(i)] - v[x]) / dom.eps();
        }
    }
    worst[3] = worst[3].max((lhs - rhs).abs());

    // Quadratic potential: linearized corrector vanishes and the linearization is exact.
    let grid = TorusGrid::new(2, 3).unwrap();
    let v = Potential::quadratic();
    let time = TimeGrid::new(-9.0, 0.0, 1.0 / 16.0).unwrap();
    let traj = run_corrector(&grid, &time, &SlopePath::constant(&[0.4, -0.2]), &v, &src, 1).unwrap();
    let w = solve_linearized_corrector(&grid, &traj, &[0.4, -0.2], &[0.7, 0.3], &v).unwrap();
    worst[4] = w.data().iter().fold(0.0, |m, x| m.max(x.abs()));
    let qs = vec![vec![0.8, 0.1], vec![-0.3, 0.5]];
    let m = linearization_modulus(&[0.4, -0.2], &qs, 3, &v, 4, &src, &EstimatorOptions::default()).unwrap();
    worst[5] = m.points.iter().map(|p| p.residual).fold(0.0, f64::max);

    let limits = [1e-8, 1e-10, 1e-12, 1e-12, 1e-12, 1e-10];
    let names = ["duhamel", "spectral heat kernel", "mass", "summation by parts", "linearized corrector", "linearization residual"];
    let ok = worst.iter().zip(&limits).all(|(w, l)| w <= l);
    let detail: Vec<String> = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    verdict(1, "exact oracles", ok, &detail.join(", "));
}

#[test]
fn gaussian_stationarity() {
    let params = GffParams { dim: 2, radius: 4, horizon: None, dt: Some(1.0 / 64.0), modes: vec![] };
    let r = gff_experiment(&params, 2000, &NoiseSource::new(202, 0)).unwrap();
    // Oracle: pseudo-inverse of the dense periodic graph Laplacian.
    let grid = TorusGrid::new(2, 4).unwrap();
    let n = grid.len();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for axis in 0..2 {
            for y in [grid.plus(x, axis), grid.minus(x, axis)] {
                lap[(x, x)] += 1.0;
                lap[(x, y)] -= 1.0;
            }
        }
    }
    let green = lap.pseudo_inverse(1e-10).unwrap();
    let origin = grid.site_at(&[0, 0]);
    let mut worst_z: f64 = 0.0;
    let mut cov_ok = true;
    for e in &r.covariance {
        let x = grid.site_at(&e.offset);
        let oracle = green[(origin, x)];
        let z = (e.empirical.mean - oracle).abs() / e.empirical.se;
        worst_z = worst_z.max(z);
        cov_ok &= z <= 4.0;
    }
    let worst_rate = r.modes.iter().map(|m| m.relative_error).fold(0.0, f64::max);
    verdict(
        2,
        "gaussian stationarity",
        cov_ok && worst_rate <= 0.1,
        &format!("largest |z| {worst_z:.2} over {} entries, largest rate error {worst_rate:.3}", r.covariance.len()),
    );
}

#[test]
fn surface_tension_oracle() {
    let v = Potential::quadratic();
    let src = NoiseSource::new(303, 0);
    let opts = EstimatorOptions::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]] {
        let e = estimate_tau(&TauSlope::Constant(p.to_vec()), 8, &v, 500, &src, &opts).unwrap();
        for i in 0..2 {
            ok &= (e.mean[i] - p[i]).abs() <= 3.0 * e.se[i] + 1e-12 && e.se[i] <= 0.02;
        }
        detail.push(format!("tau{:?} = [{:.4}, {:.4}] se [{:.4}, {:.4}]", p, e.mean[0], e.mean[1], e.se[0], e.se[1]));
    }
    let h = estimate_hessian(&[0.0, 0.0], 8, &v, 500, &src, &opts).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let target = if i == j { 1.0 } else { 0.0 };
            ok &= (h.matrix[i][j] - target).abs() <= 3.0 * h.se[i][j] + 1e-10;
        }
    }
    detail.push(format!("hessian {:?}", h.matrix));
    verdict(3, "surface tension oracle", ok, &detail.join("; "));
}

#[test]
fn finite_volume_convergence() {
    let v = Potential::soft_quartic(0.5).unwrap();
    let src = NoiseSource::new(404, 0);
    let opts = EstimatorOptions::default();
    let p = TauSlope::Constant(vec![0.75, -0.25]);
    let a = estimate_tau(&p, 8, &v, 200, &src, &opts).unwrap();
    let b = estimate_tau(&p, 16, &v, 100, &src, &opts).unwrap();
    let tol = 10.0 / 8.0 * (1.0 + 8f64.ln().sqrt());
    let mut ok = true;
    let mut detail = Vec::new();
    for i in 0..2 {
        let diff = (a.mean[i] - b.mean[i]).abs();
        let se = (a.se[i].powi(2) + b.se[i].powi(2)).sqrt();
        ok &= diff <= tol;
        let class = if diff >= 2.0 * se { "resolved" } else { "consistent with 0" };
        detail.push(format!("|d{i}| {diff:.4} ({class}, se {se:.4})"));
    }
    detail.push(format!("tolerance {tol:.3}"));
    verdict(4, "finite-volume convergence", ok, &detail.join(", "));
}

#[test]
fn flux_decay() {
    let v = Potential::soft_quartic(0.5).unwrap();
    let r = flux_decay_experiment(&[2, 4, 8, 16], 32, &[0.5, 0.0], &v, 300, &NoiseSource::new(505, 0), &EstimatorOptions::default())
        .unwrap();
    let fit = r.flux_fit.expect("flux fit");
    verdict(
        5,
        "flux decay",
        (-2.7..=-1.3).contains(&fit.exponent) && fit.r2 >= 0.9,
        &format!("exponent {:.3}, r2 {:.4}", fit.exponent, fit.r2),
    );
}

/// Continuous-time variance of the quadratic corrector at the origin after
/// time `t` from zero.
fn corrector_variance_continuum(dim: usize, l: usize, t: f64) -> f64 {
    let side = 2 * l + 1;
    let total = side.pow(dim as u32);
    (1..total)
        .map(|idx| {
            let lam = eigenvalue(&unflatten(idx, side, dim), side);
            (1.0 - (-2.0 * lam * t).exp()) / lam
        })
        .sum::<f64>()
        / total as f64
}

#[test]
fn corrector_fluctuations() {
    let v = Potential::quadratic();
    let opts = EstimatorOptions::default();
    let sizes = [8, 16, 32];
    let r2d = corrector_fluctuation_experiment(2, &sizes, &v, 60, &NoiseSource::new(606, 0), &opts).unwrap();
    let fit = r2d.fit.clone().unwrap();
    let logs: Vec<f64> = sizes.iter().map(|&l| (l as f64).ln()).collect();
    let oracle: Vec<f64> = sizes.iter().map(|&l| corrector_variance_continuum(2, l, (l * l) as f64)).collect();
    let ol = logs.iter().sum::<f64>() / 3.0;
    let oy = oracle.iter().sum::<f64>() / 3.0;
    let oracle_slope = logs.iter().zip(&oracle).map(|(x, y)| (x - ol) * (y - oy)).sum::<f64>()
        / logs.iter().map(|x| (x - ol).powi(2)).sum::<f64>();
    let rel = (fit.slope - oracle_slope).abs() / oracle_slope;
    let r3d = corrector_fluctuation_experiment(3, &[8, 16], &v, 12, &NoiseSource::new(607, 0), &opts).unwrap();
    let growth = r3d.rows[1].pooled / r3d.rows[0].pooled - 1.0;
    verdict(
        6,
        "corrector fluctuations",
        fit.r2 >= 0.9 && rel <= 0.5 && growth < 0.25,
        &format!(
            "d=2 r2 {:.4}, slope {:.4} vs oracle {oracle_slope:.4} ({:.1}%); d=3 growth {:.1}%",
            fit.r2,
            fit.slope,
            100.0 * rel,
            100.0 * growth
        ),
    );
}

#[test]
fn hydrodynamic_limit() {
    let params = HydroParams {
        dim: 2,
        epsilons: vec![0.25, 0.125, 0.0625, 0.03125],
        datum: BoundaryDatum::SineProduct { amplitude: 1.0 },
        potential: PotentialSpec::Quadratic,
        effective_gradient: EffectiveGradientSpec::Identity,
        t0: -1.0,
        t1: 0.0,
        dt_micro: None,
        hom_dt_fraction: 0.5,
        noise: true,
        two_scale_replicas: 1,
        kappa_log: false,
    };
    let r = hydro_limit_experiment(&params, 20, &NoiseSource::new(707, 0)).unwrap();
    let means: Vec<f64> = r.rows.iter().map(|row| row.error.mean).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let fit = r.fit.clone().expect("rate fit");
    let two_scale: Vec<String> = r
        .rows
        .iter()
        .map(|row| row.two_scale_gradient_error.map_or("-".into(), |m| format!("{:.3}", m.mean)))
        .collect();
    verdict(
        7,
        "hydrodynamic limit",
        decreasing && fit.exponent >= 0.3,
        &format!("mean errors {means:.4?}, exponent {:.3}, two-scale gradient errors {two_scale:?}", fit.exponent),
    );
}

/// `E int_0^T 1{|B_t| < eps} dt = int_0^T (2 Phi(eps / sqrt t) - 1) dt`.
fn brownian_occupation(eps: f64, horizon: f64) -> f64 {
    let normal = Normal::standard();
    let n = 20_000;
    // Midpoint rule in s = sqrt(t), which removes the endpoint singularity.
    let hs = horizon.sqrt() / n as f64;
    (0..n)
        .map(|k| {
            let s = (k as f64 + 0.5) * hs;
            2.0 * s * (2.0 * normal.cdf(eps / s) - 1.0) * hs
        })
        .sum()
}

#[test]
fn occupation_time() {
    let src = NoiseSource::new(808, 0);
    let eps = [0.05, 0.1, 0.2];
    let coarse = occupation_experiment(&ProcessSpec::brownian(1.0, 1e-3), &eps, 2000, &src).unwrap();
    let fine = occupation_experiment(&ProcessSpec::brownian(1.0, 1e-5), &eps, 2000, &src).unwrap();
    let exact: Vec<f64> = eps.iter().map(|&e| brownian_occupation(e, 1.0)).collect();
    let ratio = coarse.slope / fine.slope;
    let edge = ProcessSpec::EdgeGradient {
        potential: PotentialSpec::Quadratic,
        radius: 4,
        slope: vec![0.0, 0.0],
        axis: 0,
        horizon: 4.0,
        dt: Some(1.0 / 64.0),
    };
    let er = occupation_experiment(&edge, &eps, 500, &src).unwrap();
    let ok = coarse.relative_intercept <= 0.1
        && coarse.slope > 0.0
        && (0.5..=2.0).contains(&ratio)
        && er.relative_intercept <= 0.1
        && er.slope > 0.0;
    verdict(
        8,
        "occupation time",
        ok,
        &format!(
            "brownian slope {:.4} (fine-step {:.4}, exact means {exact:.4?} vs {:.4?}), rel. intercept {:.3}; edge slope {:.4}, rel. intercept {:.3}",
            coarse.slope, fine.slope, coarse.means, coarse.relative_intercept, er.slope, er.relative_intercept
        ),
    );
}

#[test]
fn lusin_and_linearization() {
    let kinked = Potential::kinked(0.5).unwrap();
    let kappas = [0.2, 0.1, 0.05];
    let measures: Vec<f64> = kappas.iter().map(|&k| lusin_measure(&kinked, 2.0, k, 0.1).unwrap()).collect();
    let bounded = measures.iter().zip(&kappas).all(|(m, k)| *m <= 4.0 * k);
    let decreasing = measures.windows(2).all(|w| w[1] < w[0]);
    let quad = lusin_measure(&Potential::quadratic(), 2.0, 0.1, 0.1).unwrap();

    let p = [0.9, 0.0];
    let qs: Vec<Vec<f64>> = [0.4, 0.2, 0.1].iter().map(|d| vec![p[0] + d, p[1]]).collect();
    let m = linearization_modulus(&p, &qs, 4, &kinked, 200, &NoiseSource::new(909, 0), &EstimatorOptions::default()).unwrap();
    let ratios: Vec<(f64, f64)> = m.points.iter().map(|pt| (pt.residual / pt.distance, pt.residual_se / pt.distance)).collect();
    let trend = ratios.windows(2).all(|w| w[1].0 <= w[0].0 + 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    verdict(
        9,
        "lusin and linearization",
        bounded && decreasing && quad == 0.0 && trend,
        &format!("measures {measures:.4?}, quadratic {quad}, residual/|p-q| {:.4?}", ratios.iter().map(|r| r.0).collect::<Vec<_>>()),
    );
}

#[test]
fn norm_machinery() {
    let grid = TorusGrid::new(2, 5).unwrap();
    let q = ParabolicCylinder::triadic(2, 2).unwrap();
    let mut worst: f64 = 0.0;
    for sample in 0..20u64 {
        let src = NoiseSource::new(1000 + sample, 0);
        let slices: Vec<Vec<f64>> = (0..82).map(|j| random_field(&src, grid.len(), j)).collect();
        let f = SpaceTimeField::from_slices(-81.0, 1.0, slices);
        let exact = hminus1_par_exact(&f, &grid, &q).unwrap();
        assert!(exact.converged);
        worst = worst.max(exact.value / hminus1_par_multiscale(&f, &grid, 2).unwrap());
    }

    // Dense oracle on a 3 x 3 box with three unknown slices.
    let grid = TorusGrid::new(2, 2).unwrap();
    let q = ParabolicCylinder::new(-3.0, 0.0, vec![0, 0], Some(1)).unwrap();
    let src = NoiseSource::new(1099, 0);
    let slices: Vec<Vec<f64>> = (0..4).map(|j| random_field(&src, grid.len(), j)).collect();
    let f = SpaceTimeField::from_slices(-3.0, 1.0, slices.clone());
    let got = hminus1_par_exact(&f, &grid, &q).unwrap().value;
    let box_sites: Vec<usize> = (0..grid.len()).filter(|&x| grid.offsets(x).iter().all(|o| o.abs() <= 1)).collect();
    let n = box_sites.len();
    let mut b = DMatrix::<f64>::identity(n, n) / 9.0;
    for (k, &x) in box_sites.iter().enumerate() {
        for (l, &y) in box_sites.iter().enumerate() {
            let dist: i64 = grid.offsets(x).iter().zip(grid.offsets(y)).map(|(a, c)| (a - c).abs()).sum();
            if k == l {
                b[(k, l)] += 4.0;
            } else if dist == 1 {
                b[(k, l)] -= 1.0;
            }
        }
    }
    let binv = b.clone().try_inverse().unwrap();
    let nt = 3;
    let mut a = DMatrix::<f64>::zeros(n * nt, n * nt);
    for j in 0..nt {
        for jj in 0..nt {
            // Time differences with a zero slice before the first unknown.
            let weight = match (j as i64 - jj as i64, j == nt - 1) {
                (0, false) => 2.0,
                (0, true) => 1.0,
                (1, _) | (-1, _) => -1.0,
                _ => 0.0,
            };
            let mut block = a.view_mut((j * n, jj * n), (n, n));
            block += &binv * weight;
            if j == jj {
                block += &b;
            }
        }
    }
    let rhs = DVector::from_iterator(n * nt, (1..4).flat_map(|j| box_sites.iter().map(|&x| slices[j][x]).collect::<Vec<_>>()).collect::<Vec<_>>());
    let sol = a.lu().solve(&rhs).unwrap();
    let oracle = (rhs.dot(&sol) / (n * nt) as f64).sqrt();
    let rel = (got - oracle).abs() / oracle;
    verdict(
        10,
        "norm machinery",
        worst <= 10.0 && rel <= 1e-6,
        &format!("largest exact/multiscale ratio {worst:.3}, dense-oracle relative error {rel:.1e}"),
    );
}

#[test]
fn large_scale_regularity() {
    let v = Potential::quadratic();
    let r = excess_experiment(32, &[8, 16, 32], &[0.0, 0.0], &v, 20, 5.0, &NoiseSource::new(1111, 0), &EstimatorOptions::default())
        .unwrap();
    let ratio = 0.5f64.sqrt();
    let good = r.profiles.iter().filter(|p| p.excess[1] <= p.excess[2] * ratio + 5.0).count();
    let fraction = good as f64 / r.profiles.len() as f64;
    let c = r.profiles.iter().map(|p| p.oscillation[0] / (p.oscillation[2] + 1.0)).fold(0.0, f64::max);
    verdict(
        11,
        "large-scale regularity",
        fraction >= 0.8 && c <= 20.0,
        &format!("decay holds in {:.0}% of replicas, fitted C {c:.3}", 100.0 * fraction),
    );
}

#[test]
fn reproducibility() {
    let configs = [
        r#"{"schema_version": 1, "seed": 5, "replicas": 6, "experiment": "corrector",
            "params": {"dim": 2, "sizes": [3, 4, 5], "potential": {"kind": "soft_quartic", "a": 0.5}}}"#,
        r#"{"schema_version": 1, "seed": 6, "replicas": 8, "experiment": "occupation",
            "params": {"process": {"kind": "brownian", "x0": 0.0, "horizon": 1.0, "dt": 0.001}, "thresholds": [0.05, 0.1, 0.2]}}"#,
        r#"{"schema_version": 1, "seed": 7, "replicas": 4, "experiment": "hessian",
            "params": {"dim": 2, "radius": 3, "slope": [0.3, 0.1], "potential": {"kind": "kinked", "b": 0.5}}}"#,
    ];
    let mut ok = true;
    for text in configs {
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let runs: Vec<Vec<String>> = [Some(1), Some(2), None, Some(1)]
            .iter()
            .map(|&t| run_with_threads(&cfg, t).unwrap().tables.iter().map(|c| c.text().to_string()).collect())
            .collect();
        ok &= runs.windows(2).all(|w| w[0] == w[1]);
    }
    let key = NoiseSource::new(5, 3).normal(Stream::ForwardTime, site_key(&[2, -1]), 17);
    ok &= key.to_bits() == NoiseSource::new(5, 3).normal(Stream::ForwardTime, site_key(&[2, -1]), 17).to_bits();
    verdict(12, "reproducibility", ok, "three experiments, thread counts 1, 2, default and repeat");
}
