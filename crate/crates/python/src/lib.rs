use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gradphi::dynamics::{run_corrector, sample_gff, SlopePath, TimeGrid};
use gradphi::harness::{run_experiment, ExperimentConfig};
use gradphi::homogenize::{estimate_hessian, estimate_tau, EstimatorOptions, TauSlope};
use gradphi::lattice::{EdgeField, TorusGrid};
use gradphi::noise::{self, Stream};
use gradphi::stats;

fn to_py(e: gradphi::Error) -> PyErr {
    match e {
        gradphi::Error::InvalidParameter(_) | gradphi::Error::Config(_) | gradphi::Error::OutsideDomain(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pyclass(frozen, module = "gradphi_py")]
struct Potential {
    inner: gradphi::potential::Potential,
}

#[pymethods]
impl Potential {
    #[staticmethod]
    fn quadratic() -> Self {
        Self { inner: gradphi::potential::Potential::quadratic() }
    }

    #[staticmethod]
    fn soft_quartic(a: f64) -> PyResult<Self> {
        Ok(Self { inner: gradphi::potential::Potential::soft_quartic(a).map_err(to_py)? })
    }

    #[staticmethod]
    fn kinked(b: f64) -> PyResult<Self> {
        Ok(Self { inner: gradphi::potential::Potential::kinked(b).map_err(to_py)? })
    }

    fn mollify(&self, kappa: f64) -> PyResult<Self> {
        Ok(Self { inner: gradphi::potential::Potential::mollify(&self.inner, kappa).map_err(to_py)? })
    }

    fn v(&self, x: f64) -> f64 {
        self.inner.v(x)
    }

    fn dv(&self, x: f64) -> f64 {
        self.inner.dv(x)
    }

    fn ddv(&self, x: f64) -> f64 {
        self.inner.ddv(x)
    }

    #[getter]
    fn c_minus(&self) -> f64 {
        self.inner.c_minus()
    }

    #[getter]
    fn c_plus(&self) -> f64 {
        self.inner.c_plus()
    }

    fn lusin_measure(&self, s: f64, kappa: f64, eps: f64) -> PyResult<f64> {
        gradphi::potential::lusin_measure(&self.inner, s, kappa, eps).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Potential({:?})", self.inner.spec())
    }
}

#[pyclass(frozen, module = "gradphi_py")]
struct Torus {
    inner: TorusGrid,
}

impl Torus {
    fn check_field(&self, u: &[f64]) -> PyResult<()> {
        if u.len() != self.inner.len() {
            return Err(PyValueError::new_err(format!("expected {} values, got {}", self.inner.len(), u.len())));
        }
        Ok(())
    }
}

#[pymethods]
impl Torus {
    #[new]
    fn new(dim: usize, radius: usize) -> PyResult<Self> {
        Ok(Self { inner: TorusGrid::new(dim, radius).map_err(to_py)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn offsets(&self, site: usize) -> PyResult<Vec<i64>> {
        if site >= self.inner.len() {
            return Err(PyValueError::new_err("site out of range"));
        }
        Ok(self.inner.offsets(site))
    }

    fn site_at(&self, offset: Vec<i64>) -> PyResult<usize> {
        if offset.len() != self.inner.dim() {
            return Err(PyValueError::new_err("offset has the wrong dimension"));
        }
        Ok(self.inner.site_at(&offset))
    }

    /// Forward differences, `dim` values per site.
    fn gradient(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_field(&u)?;
        Ok(self.inner.gradient(&u).values)
    }

    fn divergence(&self, g: Vec<f64>) -> PyResult<Vec<f64>> {
        if g.len() != self.inner.len() * self.inner.dim() {
            return Err(PyValueError::new_err("edge field has the wrong length"));
        }
        Ok(self.inner.divergence_field(&EdgeField::from_values(self.inner.dim(), g)))
    }

    fn laplacian(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_field(&u)?;
        Ok(self.inner.laplacian(&u))
    }
}

#[pyclass(frozen, module = "gradphi_py")]
struct NoiseSource {
    inner: noise::NoiseSource,
}

fn stream(name: &str) -> PyResult<Stream> {
    Ok(match name {
        "forward" => Stream::ForwardTime,
        "backward" => Stream::BackwardTime,
        "free_field" => Stream::FreeField,
        "auxiliary" => Stream::Auxiliary,
        _ => return Err(PyValueError::new_err(format!("unknown stream {name:?}"))),
    })
}

#[pymethods]
impl NoiseSource {
    #[new]
    #[pyo3(signature = (seed, replica = 0))]
    fn new(seed: u64, replica: u32) -> Self {
        Self { inner: noise::NoiseSource::new(seed, replica) }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn replica(&self) -> u32 {
        self.inner.replica
    }

    fn with_replica(&self, replica: u32) -> Self {
        Self { inner: self.inner.with_replica(replica) }
    }

    /// Standard normal keyed by stream name, lattice coordinates and index.
    fn normal(&self, stream_name: &str, coords: Vec<i64>, index: u64) -> PyResult<f64> {
        Ok(self.inner.normal(stream(stream_name)?, noise::site_key(&coords), index))
    }
}

/// Exact free-field sample on the torus.
#[pyfunction]
#[pyo3(signature = (grid, src, sample = 0))]
fn gff_sample(grid: &Torus, src: &NoiseSource, sample: u32) -> Vec<f64> {
    sample_gff(&grid.inner, &src.inner, sample)
}

/// Final slice of the slope-`p` corrector dynamic run over `[s_minus, 0]`
/// from zero.
#[pyfunction]
#[pyo3(signature = (grid, potential, slope, src, s_minus, dt = None))]
fn corrector(
    py: Python<'_>,
    grid: &Torus,
    potential: &Potential,
    slope: Vec<f64>,
    src: &NoiseSource,
    s_minus: f64,
    dt: Option<f64>,
) -> PyResult<Vec<f64>> {
    let dt = dt.unwrap_or_else(|| gradphi::dynamics::default_dt(grid.inner.dim(), potential.inner.c_plus()));
    let time = TimeGrid::new(s_minus, 0.0, dt).map_err(to_py)?;
    let path = SlopePath::constant(&slope);
    let field = py
        .detach(|| run_corrector(&grid.inner, &time, &path, &potential.inner, &src.inner, time.steps.max(1)))
        .map_err(to_py)?;
    Ok(field.last().to_vec())
}

/// Flux estimate of `D_p sigma_L(p)` as a JSON report.
#[pyfunction]
#[pyo3(signature = (slope, radius, potential, replicas, src, dt = None))]
fn surface_tension_gradient(
    py: Python<'_>,
    slope: Vec<f64>,
    radius: usize,
    potential: &Potential,
    replicas: usize,
    src: &NoiseSource,
    dt: Option<f64>,
) -> PyResult<String> {
    let opts = EstimatorOptions { dt, start: None };
    let est = py
        .detach(|| estimate_tau(&TauSlope::Constant(slope), radius, &potential.inner, replicas, &src.inner, &opts))
        .map_err(to_py)?;
    json(&est)
}

/// Hessian estimate of `sigma_L` at `slope` as a JSON report.
#[pyfunction]
#[pyo3(signature = (slope, radius, potential, replicas, src, dt = None))]
fn surface_tension_hessian(
    py: Python<'_>,
    slope: Vec<f64>,
    radius: usize,
    potential: &Potential,
    replicas: usize,
    src: &NoiseSource,
    dt: Option<f64>,
) -> PyResult<String> {
    let opts = EstimatorOptions { dt, start: None };
    let est = py
        .detach(|| estimate_hessian(&slope, radius, &potential.inner, replicas, &src.inner, &opts))
        .map_err(to_py)?;
    json(&est)
}

/// `(exponent, log_prefactor, r2)` of a least-squares power law.
#[pyfunction]
fn fit_power_law(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = stats::fit_power_law(&xs, &ys).map_err(to_py)?;
    Ok((f.exponent, f.log_prefactor, f.r2))
}

type RunOutput = (String, Vec<(String, String)>, bool);

/// Runs an experiment from its JSON config. Returns the report as JSON, the
/// CSV tables by file name, and whether every check passed.
#[pyfunction]
fn run(py: Python<'_>, config: &str) -> PyResult<RunOutput> {
    let cfg = ExperimentConfig::from_json(config).map_err(to_py)?;
    let out = py.detach(|| run_experiment(&cfg)).map_err(to_py)?;
    let tables = out.tables.iter().map(|t| (t.name.clone(), t.text().to_string())).collect();
    Ok((json(&out.report)?, tables, out.passed()))
}

#[pymodule]
fn gradphi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Potential>()?;
    m.add_class::<Torus>()?;
    m.add_class::<NoiseSource>()?;
    m.add_function(wrap_pyfunction!(gff_sample, m)?)?;
    m.add_function(wrap_pyfunction!(corrector, m)?)?;
    m.add_function(wrap_pyfunction!(surface_tension_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(surface_tension_hessian, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
