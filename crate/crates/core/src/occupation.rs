//! Occupation times of scalar processes with unit-order volatility: the
//! expected time spent in `(-eps, eps)` grows linearly in `eps`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{default_dt, run_stationary_periodic, StationaryStart, TimeGrid};
use crate::error::{invalid, Result};
use crate::homogenize::replicate;
use crate::lattice::TorusGrid;
use crate::noise::{NoiseSource, Stream};
use crate::potential::{Potential, PotentialSpec};
use crate::stats::{linear_fit, quantile, MeanSe};

const MAX_INTERVALS: usize = 32;

/// A scalar process sampled on a uniform time grid over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    /// `X_t = x0 + B_t`.
    Brownian { x0: f64, horizon: f64, dt: f64 },
    /// `X_t = p_axis + phi(t, e_axis) - phi(t, 0)` for the stationary
    /// dynamic at slope `p` on the torus of the given radius.
    EdgeGradient {
        potential: PotentialSpec,
        radius: usize,
        slope: Vec<f64>,
        axis: usize,
        horizon: f64,
        #[serde(default)]
        dt: Option<f64>,
    },
}

impl ProcessSpec {
    pub fn brownian(horizon: f64, dt: f64) -> Self {
        Self::Brownian { x0: 0.0, horizon, dt }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Self::Brownian { horizon, .. } | Self::EdgeGradient { horizon, .. } => *horizon,
        }
    }

    fn validate(&self) -> Result<()> {
        let h = self.horizon();
        if !(h > 0.0 && h.is_finite()) {
            return invalid(format!("horizon must be positive, got {h}"));
        }
        match self {
            Self::Brownian { x0, dt, .. } => {
                if !x0.is_finite() || !(*dt > 0.0) {
                    return invalid("Brownian process needs a finite start and a positive time step");
                }
            }
            Self::EdgeGradient { slope, axis, radius, .. } => {
                if *axis >= slope.len() || *radius == 0 {
                    return invalid("edge axis must index the slope and the radius must be positive");
                }
            }
        }
        Ok(())
    }

    /// One trajectory and its time step.
    pub fn sample(&self, src: &NoiseSource) -> Result<Sampled> {
        self.validate()?;
        match self {
            Self::Brownian { x0, horizon, dt } => {
                let time = TimeGrid::new(0.0, *horizon, *dt)?;
                let scale = time.dt.sqrt();
                let mut x = *x0;
                let mut values = Vec::with_capacity(time.steps + 1);
                values.push(x);
                for n in 0..time.steps {
                    x += scale * src.normal(Stream::Auxiliary, 0, n as u64);
                    values.push(x);
                }
                Ok(Sampled { dt: time.dt, values })
            }
            Self::EdgeGradient { potential, radius, slope, axis, horizon, dt } => {
                let v = Potential::from_spec(potential)?;
                let grid = TorusGrid::new(slope.len(), *radius)?;
                let dt = dt.unwrap_or_else(|| default_dt(slope.len(), v.c_plus()));
                let time = TimeGrid::new(0.0, *horizon, dt)?;
                let origin = grid.site_at(&vec![0; slope.len()]);
                let next = grid.plus(origin, *axis);
                let mut values = Vec::with_capacity(time.steps + 1);
                let start = StationaryStart::default_for(&v, &grid);
                run_stationary_periodic(&grid, slope, &v, src, start, &time, &mut |_j: usize, _t: f64, u: &[f64]| {
                    values.push(slope[*axis] + u[next] - u[origin])
                })?;
                Ok(Sampled { dt: time.dt, values })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sampled {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Sampled {
    /// Trapezoid-rule integral of `1{X_t in A}` over the sampled interval.
    pub fn occupation(&self, inside: impl Fn(f64) -> bool) -> f64 {
        let n = self.values.len();
        let mut acc = 0.0;
        for (j, &x) in self.values.iter().enumerate() {
            if inside(x) {
                acc += if j == 0 || j + 1 == n { 0.5 } else { 1.0 };
            }
        }
        acc * self.dt
    }
}

/// Mean occupation of `(-eps, eps)` across thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationReport {
    pub thresholds: Vec<f64>,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    /// 90% quantile of occupation / eps per threshold (zero at eps = 0).
    pub upper_quantiles: Vec<f64>,
    pub replicas: usize,
    pub slope: f64,
    pub intercept: f64,
    /// `|intercept| / (slope * max eps)`.
    pub relative_intercept: f64,
    pub r2: f64,
}

pub fn occupation_experiment(
    process: &ProcessSpec,
    thresholds: &[f64],
    replicas: usize,
    src: &NoiseSource,
) -> Result<OccupationReport> {
    if thresholds.len() < 3 {
        return invalid("occupation fit needs at least three thresholds");
    }
    if thresholds.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
        return invalid("thresholds must be nonnegative");
    }
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let per_replica = replicate(replicas, src, |s| {
        let path = process.sample(s)?;
        Ok(thresholds.iter().map(|&e| path.occupation(|x| x.abs() < e)).collect::<Vec<f64>>())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut means = Vec::with_capacity(thresholds.len());
    let mut ses = Vec::with_capacity(thresholds.len());
    let mut upper_quantiles = Vec::with_capacity(thresholds.len());
    for (k, &e) in thresholds.iter().enumerate() {
        let column: Vec<f64> = per_replica.iter().map(|r| r[k]).collect();
        let m = MeanSe::of(&column);
        means.push(m.mean);
        ses.push(m.se);
        let mut scaled: Vec<f64> = column.iter().map(|&o| if e > 0.0 { o / e } else { 0.0 }).collect();
        upper_quantiles.push(quantile(&mut scaled, 0.9));
    }
    let fit = linear_fit(thresholds, &means);
    let max_eps = thresholds.iter().cloned().fold(0.0, f64::max);
    let relative_intercept = fit.intercept.abs() / (fit.slope * max_eps).abs();
    Ok(OccupationReport {
        thresholds: thresholds.to_vec(),
        means,
        ses,
        upper_quantiles,
        replicas,
        slope: fit.slope,
        intercept: fit.intercept,
        relative_intercept,
        r2: fit.r2,
    })
}

/// A finite union of half-open intervals `[a, b)`, merged on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new(mut raw: Vec<(f64, f64)>) -> Result<Self> {
        if raw.iter().any(|&(a, b)| a.is_nan() || b.is_nan() || b < a) {
            return invalid("intervals must satisfy a <= b");
        }
        raw.retain(|&(a, b)| b > a);
        raw.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (a, b) in raw {
            match intervals.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => intervals.push((a, b)),
            }
        }
        if intervals.len() > MAX_INTERVALS {
            return invalid(format!("at most {MAX_INTERVALS} disjoint intervals are supported"));
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= x && x < b)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SetOccupation {
    pub mean: f64,
    pub se: f64,
    pub measure: f64,
    /// `mean / |A|`, the constant in `E[occupation] <= C |A|` (zero for
    /// empty or unbounded sets).
    pub ratio: f64,
    pub replicas: usize,
}

pub fn occupation_on_set(process: &ProcessSpec, set: &IntervalSet, replicas: usize, src: &NoiseSource) -> Result<SetOccupation> {
    if replicas < 2 {
        return invalid("need at least two replicas");
    }
    let samples = replicate(replicas, src, |s| Ok(process.sample(s)?.occupation(|x| set.contains(x))))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let m = MeanSe::of(&samples);
    let measure = set.measure();
    let ratio = if measure > 0.0 && measure.is_finite() { m.mean / measure } else { 0.0 };
    Ok(SetOccupation { mean: m.mean, se: m.se, measure, ratio, replicas })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `E int_0^T 1{|x0 + B_t| < eps} dt` by quadrature of the Gaussian
    /// distribution function.
    fn brownian_occupation_exact(x0: f64, horizon: f64, eps: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        let std = Normal::new(0.0, 1.0).unwrap();
        let prob = |t: f64| {
            if t <= 0.0 {
                return if x0.abs() < eps { 1.0 } else { 0.0 };
            }
            let s = t.sqrt();
            std.cdf((eps - x0) / s) - std.cdf((-eps - x0) / s)
        };
        // Substituting t = horizon u^2 removes the endpoint singularity.
        let mut acc = 0.0;
        for panel in 0..16 {
            let (nodes, weights) = crate::quadrature::gauss_legendre_on(64, panel as f64 / 16.0, (panel + 1) as f64 / 16.0);
            for (&u, &w) in nodes.iter().zip(&weights) {
                acc += w * prob(horizon * u * u) * 2.0 * horizon * u;
            }
        }
        acc
    }

    #[test]
    fn zero_threshold_and_empty_set_have_no_occupation() {
        let src = NoiseSource::new(1, 0);
        let p = ProcessSpec::brownian(1.0, 1e-3);
        let r = occupation_experiment(&p, &[0.0, 0.1, 0.2], 8, &src).unwrap();
        assert_eq!(r.means[0], 0.0);
        let empty = IntervalSet::new(vec![]).unwrap();
        assert_eq!(occupation_on_set(&p, &empty, 4, &src).unwrap().mean, 0.0);
        let all = IntervalSet::new(vec![(-1e300, 1e300)]).unwrap();
        assert!((occupation_on_set(&p, &all, 4, &src).unwrap().mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_thresholds_is_an_error() {
        let src = NoiseSource::new(1, 0);
        assert!(occupation_experiment(&ProcessSpec::brownian(1.0, 1e-3), &[0.1, 0.2], 4, &src).is_err());
    }

    #[test]
    fn intervals_are_merged() {
        let s = IntervalSet::new(vec![(0.3, 0.5), (0.0, 0.1), (0.05, 0.2), (0.5, 0.6)]).unwrap();
        assert_eq!(s.intervals(), &[(0.0, 0.2), (0.3, 0.6)]);
        assert!((s.measure() - 0.5).abs() < 1e-15);
        assert!(IntervalSet::new(vec![(1.0, 0.0)]).is_err());
        let many: Vec<(f64, f64)> = (0..33).map(|k| (k as f64, k as f64 + 0.5)).collect();
        assert!(IntervalSet::new(many).is_err());
    }

    #[test]
    fn brownian_means_match_the_gaussian_formula() {
        let src = NoiseSource::new(2, 0);
        let eps = [0.05, 0.1, 0.2];
        let r = occupation_experiment(&ProcessSpec::brownian(1.0, 1e-3), &eps, 400, &src).unwrap();
        for (k, &e) in eps.iter().enumerate() {
            let exact = brownian_occupation_exact(0.0, 1.0, e);
            assert!((r.means[k] - exact).abs() < 4.0 * r.ses[k] + 5e-3, "{} vs {exact}", r.means[k]);
        }
        assert!(r.slope > 0.0 && r.relative_intercept < 0.1);
    }

    #[test]
    fn exact_formula_small_threshold_slope() {
        // d/d eps at 0 of E int 1{|B_t| < eps} = 2 int_0^1 (2 pi t)^{-1/2} dt.
        let slope = brownian_occupation_exact(0.0, 1.0, 1e-4) / 1e-4;
        assert!((slope - 4.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn edge_gradient_process_is_linear() {
        let src = NoiseSource::new(3, 0);
        let p = ProcessSpec::EdgeGradient {
            potential: PotentialSpec::Quadratic,
            radius: 4,
            slope: vec![0.0, 0.0],
            axis: 0,
            horizon: 1.0,
            dt: None,
        };
        let r = occupation_experiment(&p, &[0.05, 0.1, 0.2], 64, &src).unwrap();
        assert!(r.slope > 0.0);
        assert!(r.means.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }
}
