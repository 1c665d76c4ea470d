use thiserror::Error;

/// Errors raised by the lattice, solver, and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("site or edge outside the domain: {0}")]
    OutsideDomain(String),

    #[error("unstable time step: dt = {dt} exceeds the explicit-scheme bound {max}")]
    UnstableTimeStep { dt: f64, max: f64 },

    #[error("time range mismatch: {0}")]
    TimeRange(String),

    #[error("forcing must have zero spatial sum on every slice (found {0:e})")]
    NonzeroForcingMass(f64),

    #[error("missing boundary data: {0}")]
    MissingBoundaryData(String),

    #[error("evaluation outside the tabulated range: {0}")]
    RangeExceeded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
