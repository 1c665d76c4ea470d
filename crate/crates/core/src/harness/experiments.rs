use serde::{Deserialize, Serialize};

use super::{Cell, Check, Csv, ExperimentOutput, GffParams, HydroParams};
use crate::dynamics::StationaryStart;
use crate::error::{invalid, Result};
use crate::homogenize::{
    corrector_fluctuation_experiment, estimate_hessian, estimate_tau, excess_experiment, flux_decay_experiment,
    linearization_modulus, EstimatorOptions, TauSlope,
};
use crate::lattice::{EdgeField, TorusGrid};
use crate::noise::{NoiseSource, Stream};
use crate::occupation::{occupation_experiment, occupation_on_set, IntervalSet, ProcessSpec};
use crate::parabolic::{heat_kernel, nash_aronson_fit, Environment};
use crate::potential::{Potential, PotentialSpec};

fn options(dt: Option<f64>, burn_in: Option<f64>) -> EstimatorOptions {
    EstimatorOptions { dt, start: burn_in.map(StationaryStart::BurnIn) }
}

fn report<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(value)?)
}

fn slope_or_zero(slope: &[f64], dim: usize) -> Result<Vec<f64>> {
    if slope.is_empty() {
        return Ok(vec![0.0; dim]);
    }
    if slope.len() != dim {
        return invalid("slope does not match the dimension");
    }
    Ok(slope.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorParams {
    pub dim: usize,
    pub sizes: Vec<usize>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub burn_in: Option<f64>,
}

pub(super) fn corrector(p: &CorrectorParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let v = Potential::from_spec(&p.potential)?;
    let r = corrector_fluctuation_experiment(p.dim, &p.sizes, &v, replicas, src, &options(p.dt, p.burn_in))?;
    let mut csv = Csv::new(
        "corrector_fluct.csv",
        &["L", "var_center", "var_center_stderr", "pooled_variance", "pooled_stderr", "grad_q999", "oracle_variance", "replicas"],
    );
    for row in &r.rows {
        csv.row(vec![
            row.l.into(),
            row.var_center.into(),
            row.var_center_se.into(),
            row.pooled.into(),
            row.pooled_se.into(),
            row.grad_q999.into(),
            row.oracle.into(),
            row.replicas.into(),
        ]);
    }
    let mut checks = Vec::new();
    if p.dim == 2 {
        if let Some(fit) = &r.fit {
            checks.push(Check::new("log_growth_r2", fit.r2 >= 0.9, format!("r2 = {:.4}", fit.r2)));
            if let Some(oracle) = &r.oracle_fit {
                let rel = (fit.slope - oracle.slope).abs() / oracle.slope.abs();
                checks.push(Check::new(
                    "log_slope_vs_oracle",
                    rel <= 0.5,
                    format!("slope {:.4} vs oracle {:.4} (relative {:.3})", fit.slope, oracle.slope, rel),
                ));
            }
        }
    } else if p.dim >= 3 && r.rows.len() >= 2 {
        let (a, b) = (&r.rows[r.rows.len() - 2], &r.rows[r.rows.len() - 1]);
        let growth = b.pooled / a.pooled - 1.0;
        checks.push(Check::new(
            "bounded_growth",
            growth < 0.25,
            format!("variance growth {:.3} from L = {} to L = {}", growth, a.l, b.l),
        ));
    }
    Ok(ExperimentOutput { tables: vec![csv], report: report(&r)?, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxDecayParams {
    pub dim: usize,
    pub radius: usize,
    pub scales: Vec<usize>,
    #[serde(default)]
    pub slope: Vec<f64>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub dt: Option<f64>,
}

pub(super) fn flux_decay(p: &FluxDecayParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let v = Potential::from_spec(&p.potential)?;
    let slope = slope_or_zero(&p.slope, p.dim)?;
    let r = flux_decay_experiment(&p.scales, p.radius, &slope, &v, replicas, src, &options(p.dt, None))?;
    let mut csv = Csv::new(
        "flux_decay.csv",
        &["ell", "flux_variance", "flux_stderr", "grad_variance", "grad_stderr", "replicas"],
    );
    for row in &r.rows {
        csv.row(vec![
            row.ell.into(),
            row.flux_variance.into(),
            row.flux_variance_se.into(),
            row.grad_variance.into(),
            row.grad_variance_se.into(),
            row.replicas.into(),
        ]);
    }
    let mut checks = Vec::new();
    let d = p.dim as f64;
    match &r.flux_fit {
        Some(fit) => {
            let ok = fit.exponent >= -d - 0.7 && fit.exponent <= -d + 0.7 && fit.r2 >= 0.9;
            checks.push(Check::new(
                "flux_variance_exponent",
                ok,
                format!("exponent {:.3} (r2 {:.3}), expected {} +- 0.7", fit.exponent, fit.r2, -d),
            ));
        }
        None => checks.push(Check::new("flux_variance_exponent", false, "power-law fit failed")),
    }
    Ok(ExperimentOutput { tables: vec![csv], report: report(&r)?, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceTensionParams {
    pub dim: usize,
    pub radii: Vec<usize>,
    pub slopes: Vec<Vec<f64>>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub burn_in: Option<f64>,
    /// Largest acceptable standard error per component.
    #[serde(default)]
    pub max_se: Option<f64>,
}

/// `10 (1 / L)(1 + sqrt(log L))`, the tolerance between consecutive sizes.
pub fn finite_volume_tolerance(l: usize) -> f64 {
    let l = l as f64;
    10.0 / l * (1.0 + l.ln().sqrt())
}

pub(super) fn surface_tension(p: &SurfaceTensionParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let v = Potential::from_spec(&p.potential)?;
    if p.radii.is_empty() || p.slopes.is_empty() {
        return invalid("need at least one radius and one slope");
    }
    if p.slopes.iter().any(|s| s.len() != p.dim) {
        return invalid("slopes do not match the dimension");
    }
    let opts = options(p.dt, p.burn_in);
    let mut header: Vec<String> = vec!["L".into()];
    header.extend((0..p.dim).map(|i| format!("p{i}")));
    header.extend((0..p.dim).map(|i| format!("tau{i}")));
    header.extend((0..p.dim).map(|i| format!("stderr{i}")));
    header.push("replicas".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new("surface_tension.csv", &header_refs);
    let mut estimates = Vec::new();
    for &l in &p.radii {
        for s in &p.slopes {
            let e = estimate_tau(&TauSlope::Constant(s.clone()), l, &v, replicas, src, &opts)?;
            let mut row: Vec<Cell> = vec![l.into()];
            row.extend(s.iter().map(|&x| Cell::from(x)));
            row.extend(e.mean.iter().map(|&x| Cell::from(x)));
            row.extend(e.se.iter().map(|&x| Cell::from(x)));
            row.push(e.replicas.into());
            csv.row(row);
            estimates.push((l, e));
        }
    }
    let mut checks = Vec::new();
    if v.is_quadratic() {
        for (l, e) in &estimates {
            let ok = e.mean.iter().zip(&e.slope).zip(&e.se).all(|((m, s), se)| (m - s).abs() <= 3.0 * se + 1e-12);
            checks.push(Check::new(format!("quadratic_oracle_L{l}_p{:?}", e.slope), ok, format!("tau {:?} se {:?}", e.mean, e.se)));
        }
    }
    if let Some(max) = p.max_se {
        let worst = estimates.iter().flat_map(|(_, e)| e.se.iter().copied()).fold(0.0, f64::max);
        checks.push(Check::new("standard_error", worst <= max, format!("largest SE {worst:.4} (limit {max})")));
    }
    let mut radii = p.radii.clone();
    radii.sort_unstable();
    radii.dedup();
    for w in radii.windows(2) {
        for s in &p.slopes {
            let find = |l: usize| estimates.iter().find(|(ll, e)| *ll == l && &e.slope == s).map(|(_, e)| e).unwrap();
            let (a, b) = (find(w[0]), find(w[1]));
            let tol = finite_volume_tolerance(w[0]);
            let mut detail = Vec::new();
            let mut ok = true;
            for i in 0..p.dim {
                let diff = (a.mean[i] - b.mean[i]).abs();
                let se = (a.se[i].powi(2) + b.se[i].powi(2)).sqrt();
                ok &= diff <= tol;
                let status = if diff >= 2.0 * se { "resolved" } else { "consistent with 0" };
                detail.push(format!("|d{i}| = {diff:.4} ({status}, combined SE {se:.4})"));
            }
            checks.push(Check::new(
                format!("finite_volume_L{}_L{}_p{:?}", w[0], w[1], s),
                ok,
                format!("{}; tolerance {tol:.4}", detail.join(", ")),
            ));
        }
    }
    let rep: Vec<_> = estimates.iter().map(|(_, e)| e).collect();
    Ok(ExperimentOutput { tables: vec![csv], report: report(&rep)?, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianParams {
    pub dim: usize,
    pub radius: usize,
    #[serde(default)]
    pub slope: Vec<f64>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub dt: Option<f64>,
}

pub(super) fn hessian(p: &HessianParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let v = Potential::from_spec(&p.potential)?;
    let slope = slope_or_zero(&p.slope, p.dim)?;
    let h = estimate_hessian(&slope, p.radius, &v, replicas, src, &options(p.dt, None))?;
    let mut csv = Csv::new("hessian.csv", &["i", "j", "value", "stderr", "replicas"]);
    for i in 0..p.dim {
        for j in 0..p.dim {
            csv.row(vec![i.into(), j.into(), h.matrix[i][j].into(), h.se[i][j].into(), h.replicas.into()]);
        }
    }
    let mut checks = vec![Check::new(
        "positive_definite",
        h.positive_definite,
        format!("eigenvalues {:?}", h.eigenvalues),
    )];
    if v.is_quadratic() {
        let ok = (0..p.dim).all(|i| {
            (0..p.dim).all(|j| {
                let target = if i == j { 1.0 } else { 0.0 };
                (h.matrix[i][j] - target).abs() <= 3.0 * h.se[i][j] + 1e-10
            })
        });
        checks.push(Check::new("quadratic_identity", ok, format!("matrix {:?}", h.matrix)));
    }
    Ok(ExperimentOutput { tables: vec![csv], report: report(&h)?, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizeParams {
    pub dim: usize,
    pub radius: usize,
    #[serde(default)]
    pub slope: Vec<f64>,
    /// Distances `|p - q|` along `direction`.
    pub distances: Vec<f64>,
    /// Defaults to the first coordinate axis.
    #[serde(default)]
    pub direction: Vec<f64>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub dt: Option<f64>,
}

pub(super) fn linearize(p: &LinearizeParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let v = Potential::from_spec(&p.potential)?;
    let slope = slope_or_zero(&p.slope, p.dim)?;
    let mut dir = if p.direction.is_empty() {
        let mut e = vec![0.0; p.dim];
        e[0] = 1.0;
        e
    } else {
        p.direction.clone()
    };
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if dir.len() != p.dim || !(norm > 0.0) {
        return invalid("direction must be a nonzero vector of the lattice dimension");
    }
    dir.iter_mut().for_each(|x| *x /= norm);
    let qs: Vec<Vec<f64>> = p.distances.iter().map(|&t| slope.iter().zip(&dir).map(|(a, b)| a + t * b).collect()).collect();
    let m = linearization_modulus(&slope, &qs, p.radius, &v, replicas, src, &options(p.dt, None))?;
    let mut csv = Csv::new("linearization.csv", &["distance", "residual", "stderr", "ratio", "ratio_stderr", "replicas"]);
    let mut points: Vec<_> = m.points.iter().collect();
    points.sort_by(|a, b| b.distance.total_cmp(&a.distance));
    for pt in &points {
        csv.row(vec![
            pt.distance.into(),
            pt.residual.into(),
            pt.residual_se.into(),
            (pt.residual / pt.distance).into(),
            (pt.residual_se / pt.distance).into(),
            m.replicas.into(),
        ]);
    }
    let mut ok = true;
    let mut detail = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ra, rb) = (a.residual / a.distance, b.residual / b.distance);
        let se = ((a.residual_se / a.distance).powi(2) + (b.residual_se / b.distance).powi(2)).sqrt();
        ok &= rb <= ra + 2.0 * se;
        detail.push(format!("{:.3}->{:.3}: {ra:.4} -> {rb:.4}", a.distance, b.distance));
    }
    let checks = vec![Check::new("ratio_non_increasing", ok, detail.join(", "))];
    Ok(ExperimentOutput { tables: vec![csv], report: report(&m)?, checks })
}

pub(super) fn hydro(p: &HydroParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let r = super::hydro_limit_experiment(p, replicas, src)?;
    let mut csv = Csv::new(
        "hydro.csv",
        &[
            "epsilon",
            "mean_error",
            "stderr",
            "mean_gradient_error",
            "gradient_stderr",
            "mean_two_scale_gradient_error",
            "two_scale_stderr",
            "kappa",
            "replicas",
        ],
    );
    let mut per = Csv::new("hydro_replicas.csv", &["epsilon", "replica", "error", "gradient_error", "two_scale_gradient_error"]);
    for row in &r.rows {
        csv.row(vec![
            row.epsilon.into(),
            row.error.mean.into(),
            row.error.se.into(),
            row.gradient_error.mean.into(),
            row.gradient_error.se.into(),
            row.two_scale_gradient_error.map(|m| m.mean).into(),
            row.two_scale_gradient_error.map(|m| m.se).into(),
            row.kappa.into(),
            row.replicas.into(),
        ]);
        for (k, s) in row.samples.iter().enumerate() {
            per.row(vec![
                row.epsilon.into(),
                k.into(),
                s.error.into(),
                s.gradient_error.into(),
                s.two_scale_gradient_error.into(),
            ]);
        }
    }
    let means: Vec<f64> = r.rows.iter().map(|r| r.error.mean).collect();
    let mut checks = vec![Check::new("error_decreasing", r.decreasing, format!("mean errors {means:?}"))];
    if let Some(fit) = &r.fit {
        checks.push(Check::new(
            "rate_exponent",
            fit.exponent >= 0.3,
            format!("exponent {:.3} (r2 {:.3}) after the log correction", fit.exponent, fit.r2),
        ));
    }
    Ok(ExperimentOutput { tables: vec![csv, per], report: report(&r)?, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationParams {
    pub process: ProcessSpec,
    pub thresholds: Vec<f64>,
    /// Time step of the fine-step oracle run.
    #[serde(default)]
    pub oracle_dt: Option<f64>,
    /// Sets `A` as lists of intervals `[a, b)`.
    #[serde(default)]
    pub sets: Vec<Vec<(f64, f64)>>,
}

fn with_dt(process: &ProcessSpec, dt: f64) -> ProcessSpec {
    let mut p = process.clone();
    match &mut p {
        ProcessSpec::Brownian { dt: d, .. } => *d = dt,
        ProcessSpec::EdgeGradient { dt: d, .. } => *d = Some(dt),
    }
    p
}

fn occupation_table(name: &str, r: &crate::occupation::OccupationReport) -> Csv {
    let mut csv = Csv::new(name, &["epsilon", "mean_occupation", "stderr", "replicas"]);
    for k in 0..r.thresholds.len() {
        csv.row(vec![r.thresholds[k].into(), r.means[k].into(), r.ses[k].into(), r.replicas.into()]);
    }
    csv
}

pub(super) fn occupation(p: &OccupationParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let r = occupation_experiment(&p.process, &p.thresholds, replicas, src)?;
    let mut tables = vec![occupation_table("occupation.csv", &r)];
    let mut checks = vec![Check::new(
        "linear_through_origin",
        r.slope > 0.0 && r.relative_intercept <= 0.1,
        format!("slope {:.4}, relative intercept {:.4}", r.slope, r.relative_intercept),
    )];
    let mut oracle = None;
    if let Some(dt) = p.oracle_dt {
        let o = occupation_experiment(&with_dt(&p.process, dt), &p.thresholds, replicas, src)?;
        let ratio = r.slope / o.slope;
        checks.push(Check::new(
            "slope_vs_fine_step",
            (0.5..=2.0).contains(&ratio),
            format!("slope {:.4} vs fine-step {:.4}", r.slope, o.slope),
        ));
        tables.push(occupation_table("occupation_oracle.csv", &o));
        oracle = Some(o);
    }
    let mut sets = Vec::new();
    if !p.sets.is_empty() {
        let mut csv = Csv::new("occupation_sets.csv", &["set", "measure", "mean_occupation", "stderr", "ratio", "replicas"]);
        for (k, raw) in p.sets.iter().enumerate() {
            let set = IntervalSet::new(raw.clone())?;
            let s = occupation_on_set(&p.process, &set, replicas, src)?;
            csv.row(vec![k.into(), s.measure.into(), s.mean.into(), s.se.into(), s.ratio.into(), s.replicas.into()]);
            sets.push(s);
        }
        tables.push(csv);
    }
    let rep = serde_json::json!({ "report": r, "oracle": oracle, "sets": sets });
    Ok(ExperimentOutput { tables, report: rep, checks })
}

fn default_slack() -> f64 {
    5.0
}
fn default_fraction() -> f64 {
    0.8
}
fn default_max_c() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcessParams {
    pub dim: usize,
    pub radius: usize,
    pub scales: Vec<usize>,
    #[serde(default)]
    pub slope: Vec<f64>,
    pub potential: PotentialSpec,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_fraction")]
    pub min_decay_fraction: f64,
    #[serde(default = "default_max_c")]
    pub max_constant: f64,
    #[serde(default)]
    pub dt: Option<f64>,
}

pub(super) fn excess(p: &ExcessParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let v = Potential::from_spec(&p.potential)?;
    let slope = slope_or_zero(&p.slope, p.dim)?;
    let r = excess_experiment(p.radius, &p.scales, &slope, &v, replicas, p.slack, src, &options(p.dt, None))?;
    let mut csv = Csv::new("excess.csv", &["replica", "scale", "excess", "oscillation"]);
    for (k, prof) in r.profiles.iter().enumerate() {
        for (i, &l) in prof.scales.iter().enumerate() {
            csv.row(vec![k.into(), l.into(), prof.excess[i].into(), prof.oscillation[i].into()]);
        }
    }
    let checks = vec![
        Check::new(
            "excess_decay",
            r.decay_fraction >= p.min_decay_fraction,
            format!("{:.3} of replicas decay (required {})", r.decay_fraction, p.min_decay_fraction),
        ),
        Check::new(
            "gradient_bound_constant",
            r.fitted_c <= p.max_constant,
            format!("fitted C = {:.4} (limit {})", r.fitted_c, p.max_constant),
        ),
    ];
    Ok(ExperimentOutput { tables: vec![csv], report: report(&r)?, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeatEnvironment {
    Constant { a: f64 },
    /// Static edge coefficients drawn uniformly-like in `[lower, upper]`
    /// from the experiment seed.
    Random { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatKernelParams {
    pub dim: usize,
    pub radius: usize,
    pub environment: HeatEnvironment,
    /// Defaults to `L^2`.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Source offset from the torus center.
    #[serde(default)]
    pub source: Vec<i64>,
}

/// Edge coefficients `lower + (upper - lower) U` with `U` a smooth
/// transform of a standard normal draw.
pub fn random_environment(grid: &TorusGrid, seed: u64, lower: f64, upper: f64) -> EdgeField {
    let src = NoiseSource::new(seed, 0);
    let mut e = EdgeField::zeros(grid.dim(), grid.len());
    for (k, v) in e.values.iter_mut().enumerate() {
        let z = src.normal(Stream::Auxiliary, k as u64, 0);
        *v = lower + (upper - lower) * 0.5 * (1.0 + (z / std::f64::consts::SQRT_2).tanh());
    }
    e
}

pub(super) fn heatkernel(p: &HeatKernelParams, seed: u64) -> Result<ExperimentOutput> {
    let grid = TorusGrid::new(p.dim, p.radius)?;
    let (env, upper) = match p.environment {
        HeatEnvironment::Constant { a } => (Environment::Constant(a), a),
        HeatEnvironment::Random { lower, upper } => {
            if !(lower > 0.0 && upper >= lower) {
                return invalid("random environment needs 0 < lower <= upper");
            }
            (Environment::Static(random_environment(&grid, seed, lower, upper)), upper)
        }
    };
    let l = p.radius as f64;
    let horizon = p.horizon.unwrap_or(l * l);
    let dt = p.dt.unwrap_or(1.0 / (8.0 * p.dim as f64 * upper));
    let source = slope_or_source(&p.source, p.dim)?;
    let y = grid.site_at(&source);
    let table = heat_kernel(&grid, &env, 0.0, y, horizon, dt)?;
    let n = grid.len() as f64;
    let mut csv = Csv::new("heat_kernel.csv", &["t", "mass", "min_shifted", "max_value"]);
    let mut worst_mass: f64 = 0.0;
    let mut min_shifted = f64::INFINITY;
    for j in 0..table.field.n_slices() {
        let s = table.field.slice(j);
        let mass: f64 = s.iter().sum();
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min) + 1.0 / n;
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst_mass = worst_mass.max(mass.abs());
        min_shifted = min_shifted.min(lo);
        csv.row(vec![table.field.time(j).into(), mass.into(), lo.into(), hi.into()]);
    }
    let fit = nash_aronson_fit(&grid, &table);
    let checks = vec![
        Check::new("mass_conservation", worst_mass <= 1e-12, format!("largest |sum P| = {worst_mass:e}")),
        Check::new("nonnegativity", min_shifted >= -1e-12, format!("min P + 1/|Lambda| = {min_shifted:e}")),
        Check::new("gaussian_bound", fit.constant.is_some(), format!("fitted constant {:?}", fit.constant)),
    ];
    Ok(ExperimentOutput { tables: vec![csv], report: report(&fit)?, checks })
}

fn slope_or_source(source: &[i64], dim: usize) -> Result<Vec<i64>> {
    if source.is_empty() {
        return Ok(vec![0; dim]);
    }
    if source.len() != dim {
        return invalid("source does not match the dimension");
    }
    Ok(source.to_vec())
}

pub(super) fn gff(p: &GffParams, replicas: usize, src: &NoiseSource) -> Result<ExperimentOutput> {
    let r = super::gff_experiment(p, replicas, src)?;
    let mut header: Vec<String> = (0..p.dim).map(|i| format!("x{i}")).collect();
    header.extend(["covariance", "stderr", "oracle"].map(String::from));
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut cov = Csv::new("gff_covariance.csv", &refs);
    let mut within = 0;
    for e in &r.covariance {
        let mut row: Vec<Cell> = e.offset.iter().map(|&o| Cell::from(o)).collect();
        row.extend([e.empirical.mean.into(), e.empirical.se.into(), e.oracle.into()]);
        cov.row(row);
        if (e.empirical.mean - e.oracle).abs() <= 4.0 * e.empirical.se {
            within += 1;
        }
    }
    let mut header: Vec<String> = (0..p.dim).map(|i| format!("k{i}")).collect();
    header.extend(["eigenvalue", "fitted_rate", "corrected_rate", "relative_error", "lags"].map(String::from));
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut modes = Csv::new("gff_modes.csv", &refs);
    for m in &r.modes {
        let mut row: Vec<Cell> = m.mode.iter().map(|&o| Cell::from(o)).collect();
        row.extend([m.eigenvalue.into(), m.fitted_rate.into(), m.corrected_rate.into(), m.relative_error.into(), m.lags.into()]);
        modes.row(row);
    }
    let worst = r.modes.iter().map(|m| m.relative_error).fold(0.0, f64::max);
    let checks = vec![
        Check::new(
            "covariance_within_4se",
            within == r.covariance.len(),
            format!("{within} of {} entries within 4 SE", r.covariance.len()),
        ),
        Check::new("mode_decay_rates", worst <= 0.1, format!("largest relative rate error {worst:.4}")),
    ];
    Ok(ExperimentOutput { tables: vec![cov, modes], report: report(&r)?, checks })
}
