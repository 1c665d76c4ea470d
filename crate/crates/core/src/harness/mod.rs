//! Experiment configuration, orchestration, output files, and the
//! command-line entry point.

mod experiments;
mod gff;
mod hydro;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use crate::stats::{fit_power_law, FitResult};
pub use experiments::{
    CorrectorParams, ExcessParams, FluxDecayParams, HeatEnvironment, HeatKernelParams, HessianParams,
    LinearizeParams, OccupationParams, SurfaceTensionParams,
};
pub use gff::{gff_covariance, gff_experiment, CovarianceEntry, GffParams, GffReport, ModeDecay};
pub use hydro::{
    hydro_limit_experiment, log_correction, BoundaryDatum, EffectiveGradientSpec, HydroParams, HydroReport, HydroRow,
    HydroSample,
};

use crate::error::{Error, Result};
use crate::noise::NoiseSource;

pub const SCHEMA_VERSION: u32 = 1;

/// Parameters of one experiment, tagged by the subcommand name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    Corrector(CorrectorParams),
    FluxDecay(FluxDecayParams),
    SurfaceTension(SurfaceTensionParams),
    Hessian(HessianParams),
    Linearize(LinearizeParams),
    Hydro(HydroParams),
    Occupation(OccupationParams),
    Excess(ExcessParams),
    Heatkernel(HeatKernelParams),
    Gff(GffParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Corrector(_) => "corrector",
            Self::FluxDecay(_) => "flux-decay",
            Self::SurfaceTension(_) => "surface-tension",
            Self::Hessian(_) => "hessian",
            Self::Linearize(_) => "linearize",
            Self::Hydro(_) => "hydro",
            Self::Occupation(_) => "occupation",
            Self::Excess(_) => "excess",
            Self::Heatkernel(_) => "heatkernel",
            Self::Gff(_) => "gff",
        }
    }
}

/// A JSON experiment description, e.g.
/// `{"schema_version": 1, "seed": 7, "replicas": 40, "experiment": "gff",
///   "params": {"dim": 2, "radius": 4}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// A named pass/fail verdict recorded in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// A cell of a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

/// CSV text with a fixed header; floats carry 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub name: String,
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), columns: header.len(), text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns, "row width differs from the header of {}", self.name);
        let parts: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Float(v) => format!("{v:.16e}"),
                Cell::Int(v) => v.to_string(),
                Cell::Text(s) => s,
                Cell::Empty => String::new(),
            })
            .collect();
        let _ = writeln!(self.text, "{}", parts.join(","));
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Tables, report, and verdicts of one run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub tables: Vec<Csv>,
    pub report: serde_json::Value,
    pub checks: Vec<Check>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the configured experiment on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let src = NoiseSource::new(cfg.seed, 0);
    let r = cfg.replicas;
    match &cfg.experiment {
        Experiment::Corrector(p) => experiments::corrector(p, r, &src),
        Experiment::FluxDecay(p) => experiments::flux_decay(p, r, &src),
        Experiment::SurfaceTension(p) => experiments::surface_tension(p, r, &src),
        Experiment::Hessian(p) => experiments::hessian(p, r, &src),
        Experiment::Linearize(p) => experiments::linearize(p, r, &src),
        Experiment::Hydro(p) => experiments::hydro(p, r, &src),
        Experiment::Occupation(p) => experiments::occupation(p, r, &src),
        Experiment::Excess(p) => experiments::excess(p, r, &src),
        Experiment::Heatkernel(p) => experiments::heatkernel(p, cfg.seed),
        Experiment::Gff(p) => experiments::gff(p, r, &src),
    }
}

/// Runs on a dedicated pool of `threads` workers (all cores when `None`).
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    seed: u64,
    threads: Option<usize>,
    wall_clock_seconds: f64,
    config: &'a ExperimentConfig,
    files: Vec<&'a str>,
    passed: bool,
    checks: &'a [Check],
    report: &'a serde_json::Value,
}

/// Writes the CSV tables and `summary.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    threads: Option<usize>,
    wall_clock_seconds: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in &out.tables {
        std::fs::write(dir.join(&t.name), t.text())?;
    }
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.name(),
        seed: cfg.seed,
        threads,
        wall_clock_seconds,
        config: cfg,
        files: out.tables.iter().map(|t| t.name.as_str()).collect(),
        passed: out.passed(),
        checks: &out.checks,
        report: &out.report,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

#[derive(Parser, Debug)]
#[command(name = "gradphi", version, about = "Monte Carlo experiments for the Langevin dynamics of gradient interfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "./out")]
    out: PathBuf,
    /// Worker threads (default: all cores); results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corrector fluctuations across torus sizes.
    Corrector(RunArgs),
    /// Variance decay of flux averages across scales.
    FluxDecay(RunArgs),
    /// Finite-volume surface tension gradient.
    SurfaceTension(RunArgs),
    /// Hessian of the finite-volume surface tension.
    Hessian(RunArgs),
    /// Linearization modulus of the corrector gradient.
    Linearize(RunArgs),
    /// Hydrodynamic-limit error across lattice spacings.
    Hydro(RunArgs),
    /// Occupation times near zero.
    Occupation(RunArgs),
    /// Excess decay of the stationary dynamic.
    Excess(RunArgs),
    /// Heat kernel and Gaussian upper bound.
    Heatkernel(RunArgs),
    /// Free-field dynamic stationarity.
    Gff(RunArgs),
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Self::Corrector(a) => ("corrector", a),
            Self::FluxDecay(a) => ("flux-decay", a),
            Self::SurfaceTension(a) => ("surface-tension", a),
            Self::Hessian(a) => ("hessian", a),
            Self::Linearize(a) => ("linearize", a),
            Self::Hydro(a) => ("hydro", a),
            Self::Occupation(a) => ("occupation", a),
            Self::Excess(a) => ("excess", a),
            Self::Heatkernel(a) => ("heatkernel", a),
            Self::Gff(a) => ("gff", a),
        }
    }
}

/// Command-line entry point. Exit codes: 0 success, 1 failed checks or a
/// runtime failure, 2 usage or configuration errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = cli.command.split();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return 2;
        }
    };
    let mut cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cfg.experiment.name() != name {
        eprintln!("error: configuration describes experiment '{}', not '{name}'", cfg.experiment.name());
        return 2;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.threads == Some(0) {
        eprintln!("error: --threads must be positive");
        return 2;
    }
    let start = Instant::now();
    let out = match run_with_threads(&cfg, args.threads) {
        Ok(o) => o,
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_))) => {
            eprintln!("error: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let wall = start.elapsed().as_secs_f64();
    if let Err(e) = write_outputs(&args.out, &cfg, &out, args.threads, wall) {
        eprintln!("error: writing outputs: {e}");
        return 1;
    }
    for c in &out.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if out.passed() {
        0
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let text = r#"{"schema_version": 1, "seed": 9, "replicas": 12, "experiment": "gff",
                       "params": {"dim": 2, "radius": 3, "dt": 0.015625}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.experiment.name(), "gff");
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn malformed_configs_are_config_errors() {
        let missing = r#"{"schema_version": 1, "seed": 1, "replicas": 2, "experiment": "hydro",
                          "params": {"epsilons": [0.25], "datum": {"kind": "sine_product", "amplitude": 1.0}}}"#;
        assert!(matches!(ExperimentConfig::from_json(missing), Err(Error::Config(_))));
        let version = r#"{"schema_version": 7, "seed": 1, "replicas": 2, "experiment": "gff", "params": {"dim": 2, "radius": 2}}"#;
        assert!(matches!(ExperimentConfig::from_json(version), Err(Error::Config(_))));
        let unknown = r#"{"schema_version": 1, "seed": 1, "replicas": 2, "experiment": "nope", "params": {}}"#;
        assert!(ExperimentConfig::from_json(unknown).is_err());
    }

    #[test]
    fn csv_formats_floats_losslessly() {
        let mut c = Csv::new("t.csv", &["a", "b", "c"]);
        c.row(vec![0.1.into(), 3usize.into(), Cell::Empty]);
        assert_eq!(c.text(), "a,b,c\n1.0000000000000001e-1,3,\n");
        let parsed: f64 = "1.0000000000000001e-1".parse().unwrap();
        assert_eq!(parsed, 0.1);
    }

    #[test]
    fn power_law_examples() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let f = fit_power_law(&xs, &sq).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let f = fit_power_law(&xs, &[3.0; 4]).unwrap();
        assert!(f.exponent.abs() < 1e-12);
        assert!(fit_power_law(&xs, &[1.0, -1.0, 1.0, 1.0]).is_err());
    }
}
