use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{default_dt, run_dirichlet, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::homogenize::{build_two_scale, mesoscale, replicate, TwoScaleOptions};
use crate::lattice::{trapezoid_weights, DirichletDomain, SiteKind, SpaceTimeField};
use crate::noise::NoiseSource;
use crate::parabolic::{solve_homogenized, EffectiveGradient};
use crate::potential::{Potential, PotentialSpec};
use crate::stats::{fit_power_law, FitResult, MeanSe};

/// Smooth boundary data on the unit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryDatum {
    /// `A prod_i sin(pi x_i) e^t`.
    SineProduct { amplitude: f64 },
    /// `A prod_i sin(pi x_i) e^{-d pi^2 t}`, a solution of the heat equation.
    HeatMode { amplitude: f64 },
    /// `offset + slope . x`.
    Affine { slope: Vec<f64>, offset: f64 },
}

impl BoundaryDatum {
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Self::SineProduct { amplitude } => amplitude * x.iter().map(|&xi| (PI * xi).sin()).product::<f64>() * t.exp(),
            Self::HeatMode { amplitude } => {
                let d = x.len() as f64;
                amplitude * x.iter().map(|&xi| (PI * xi).sin()).product::<f64>() * (-d * PI * PI * t).exp()
            }
            Self::Affine { slope, offset } => offset + slope.iter().zip(x).map(|(p, xi)| p * xi).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectiveGradientSpec {
    Identity,
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

impl EffectiveGradientSpec {
    pub fn build(&self) -> Result<EffectiveGradient> {
        match self {
            Self::Identity => Ok(EffectiveGradient::Identity),
            Self::Tabulated { nodes, values } => EffectiveGradient::tabulated(nodes.clone(), values.clone()),
        }
    }
}

fn default_dim() -> usize {
    2
}
fn default_t0() -> f64 {
    -1.0
}
fn default_fraction() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn identity() -> EffectiveGradientSpec {
    EffectiveGradientSpec::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Lattice spacings `1 / N`.
    pub epsilons: Vec<f64>,
    pub datum: BoundaryDatum,
    pub potential: PotentialSpec,
    #[serde(default = "identity")]
    pub effective_gradient: EffectiveGradientSpec,
    /// Macroscopic interval `(t0, t1)`.
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default)]
    pub t1: f64,
    /// Microscopic time step; defaults to `1 / (8 d c_plus)`.
    #[serde(default)]
    pub dt_micro: Option<f64>,
    /// Homogenized time step as a fraction of its stability bound.
    #[serde(default = "default_fraction")]
    pub hom_dt_fraction: f64,
    /// Drive the dynamic with noise (false: deterministic diagnostic mode).
    #[serde(default = "default_true")]
    pub noise: bool,
    /// Number of leading replicas for which the two-scale expansion is built.
    #[serde(default)]
    pub two_scale_replicas: usize,
    /// Include the logarithmic factor in the mesoscale in dimension 2.
    #[serde(default)]
    pub kappa_log: bool,
}

/// Errors of one replica at one lattice spacing.
#[derive(Debug, Clone, Serialize)]
pub struct HydroSample {
    /// `||u - u_hom||` in the rescaled `L^2(Q^eps)` norm.
    pub error: f64,
    /// `||grad (u - u_hom)||`.
    pub gradient_error: f64,
    /// `||grad (u - w)||` with `w` the two-scale expansion.
    pub two_scale_gradient_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HydroRow {
    pub epsilon: f64,
    pub replicas: usize,
    pub error: MeanSe,
    pub gradient_error: MeanSe,
    pub two_scale_gradient_error: Option<MeanSe>,
    pub kappa: f64,
    pub samples: Vec<HydroSample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HydroReport {
    pub rows: Vec<HydroRow>,
    /// Power law of the mean error against `eps`, after dividing by
    /// `1 + |log eps|^{1/2}` in dimension 2.
    pub fit: Option<FitResult>,
    /// Mean error strictly decreases as `eps` decreases.
    pub decreasing: bool,
}

/// `eps^{1/2} (1 + |log eps|^{1/2} 1{d = 2})` divided by `eps^{1/2}`.
pub fn log_correction(eps: f64, dim: usize) -> f64 {
    if dim == 2 {
        1.0 + eps.ln().abs().sqrt()
    } else {
        1.0
    }
}

fn lattice_size(eps: f64) -> Result<usize> {
    let n = (1.0 / eps).round();
    if !(eps > 0.0) || n < 2.0 || (n * eps - 1.0).abs() > 1e-9 {
        return invalid(format!("lattice spacing {eps} is not 1/N with N >= 2"));
    }
    Ok(n as usize)
}

/// Snapshots every macroscopic `eps^2` of the Dirichlet dynamic and the
/// homogenized solution share slice indices.
fn snapshot_count(params: &HydroParams, eps: f64) -> Result<usize> {
    let span = (params.t1 - params.t0) / (eps * eps);
    let s = span.round();
    if !(s >= 1.0) || (span - s).abs() > 1e-6 {
        return invalid(format!("time interval is not a multiple of eps^2 = {}", eps * eps));
    }
    Ok(s as usize)
}

fn squared_errors(dom: &DirichletDomain, a: &SpaceTimeField, b: &SpaceTimeField) -> (f64, f64) {
    let eps = dom.eps();
    let d = dom.dim();
    let vol = eps.powi(d as i32);
    let span = a.t_end() - a.t0();
    let mut l2 = 0.0;
    let mut grad = 0.0;
    for (j, w) in trapezoid_weights(0, a.n_slices() - 1) {
        let (sa, sb) = (a.slice(j), b.slice(j));
        for &x in dom.interior() {
            let e = sa[x] - sb[x];
            l2 += w * span * vol * e * e;
            for i in 0..d {
                let y = x + dom.stride(i);
                if dom.kind(y) == SiteKind::Interior {
                    let g = ((sa[y] - sb[y]) - e) / eps;
                    grad += w * span * vol * g * g;
                }
            }
        }
    }
    (l2, grad)
}

/// Compares the Dirichlet dynamic on the unit box with the homogenized
/// equation across lattice spacings.
pub fn hydro_limit_experiment(params: &HydroParams, replicas: usize, src: &NoiseSource) -> Result<HydroReport> {
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    if params.epsilons.is_empty() {
        return invalid("no lattice spacings given");
    }
    if !(params.hom_dt_fraction > 0.0 && params.hom_dt_fraction <= 1.0) {
        return invalid("hom_dt_fraction must lie in (0, 1]");
    }
    let d = params.dim;
    let v = Potential::from_spec(&params.potential)?;
    let dsigma = params.effective_gradient.build()?;
    let datum = params.datum.clone();
    let f = move |t: f64, x: &[f64]| datum.value(t, x);
    let mut rows = Vec::with_capacity(params.epsilons.len());
    for &eps in &params.epsilons {
        let n = lattice_size(eps)?;
        let dom = DirichletDomain::unit_cube(d, n)?;
        let snapshots = snapshot_count(params, eps)?;

        let bound = eps * eps / (8.0 * d as f64 * dsigma.lipschitz());
        let per_snapshot = ((eps * eps) / (params.hom_dt_fraction * bound) - 1e-9).ceil().max(1.0) as usize;
        let dt_hom = eps * eps / per_snapshot as f64;
        let mut hom = SpaceTimeField::with_capacity(params.t0, eps * eps, dom.len(), snapshots + 1);
        let run = solve_homogenized(&dsigma, &dom, &f, params.t0, params.t1, dt_hom, &mut |j: usize, _t: f64, u: &[f64]| {
            if j % per_snapshot == 0 {
                hom.push_slice(u);
            }
        })?;
        if run.clamped {
            return Err(Error::RangeExceeded(format!("homogenized gradient left the table at eps = {eps}")));
        }
        if hom.n_slices() != snapshots + 1 {
            return Err(Error::Numerical("homogenized snapshots are misaligned".into()));
        }

        let dt_micro = params.dt_micro.unwrap_or_else(|| default_dt(d, v.c_plus()));
        let micro = TimeGrid::new(params.t0 / (eps * eps), params.t1 / (eps * eps), dt_micro)?;
        if micro.steps % snapshots != 0 {
            return invalid("microscopic time step does not divide the snapshot interval");
        }
        let stride = micro.steps / snapshots;
        let kappa = mesoscale(eps, d, params.kappa_log);
        let two_scale_ok = kappa > eps && kappa < 1.0;
        let results = replicate(replicas, src, |s| {
            let noise = params.noise.then_some(s);
            let mut u = SpaceTimeField::with_capacity(params.t0, eps * eps, dom.len(), snapshots + 1);
            run_dirichlet(&dom, &f, &v, noise, params.t0, params.t1, micro.dt, &mut |j: usize, _t: f64, x: &[f64]| {
                if j % stride == 0 {
                    u.push_slice(x);
                }
            })?;
            let (l2, grad) = squared_errors(&dom, &u, &hom);
            let replica = s.replica as usize;
            let two_scale_gradient_error = if two_scale_ok && replica < params.two_scale_replicas {
                let opts = TwoScaleOptions { kappa, dt_micro: Some(micro.dt) };
                let exp = build_two_scale(&dom, &hom, &v, noise, &opts)?;
                Some(squared_errors(&dom, &u, &exp.field).1.sqrt())
            } else {
                None
            };
            Ok(HydroSample { error: l2.sqrt(), gradient_error: grad.sqrt(), two_scale_gradient_error })
        });
        let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
        let errors: Vec<f64> = samples.iter().map(|s| s.error).collect();
        let grads: Vec<f64> = samples.iter().map(|s| s.gradient_error).collect();
        let two: Vec<f64> = samples.iter().filter_map(|s| s.two_scale_gradient_error).collect();
        rows.push(HydroRow {
            epsilon: eps,
            replicas,
            error: MeanSe::of(&errors),
            gradient_error: MeanSe::of(&grads),
            two_scale_gradient_error: (!two.is_empty()).then(|| MeanSe::of(&two)),
            kappa,
            samples,
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].epsilon.total_cmp(&rows[a].epsilon));
    let decreasing = order.windows(2).all(|w| rows[w[1]].error.mean < rows[w[0]].error.mean);
    let fit = if rows.len() >= 3 {
        let xs: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.error.mean / log_correction(r.epsilon, d)).collect();
        fit_power_law(&xs, &ys).ok()
    } else {
        None
    };
    Ok(HydroReport { rows, fit, decreasing })
}
