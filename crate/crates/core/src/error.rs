use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter values must be finite")]
    NonFinite,
    #[error("`{0}` must be positive")]
    NonPositive(&'static str),
    #[error("`{0}` must be non-negative")]
    Negative(&'static str),
    #[error("bulk potential is not stable (c = {0}); c > 0 is required")]
    Unstable(f64),
    #[error("velocity gradient is not trace free (tr = {0:e})")]
    Divergence(f64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid resolution {0} must be even and at least 8")]
    BadResolution(usize),
    #[error("box scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("CFL number {cfl:.3} exceeds the bound {bound:.3}")]
    CflExceeded { cfl: f64, bound: f64 },
    #[error("constraint drift {drift:e} exceeds tolerance {tolerance:e} ({what})")]
    ConstraintDrift { what: &'static str, drift: f64, tolerance: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("step failed at t = {time}: {source}")]
    Step {
        time: f64,
        #[source]
        source: StepError,
    },
    #[error("adaptive time stepping stalled at t = {time} (dt = {dt:e})")]
    AdaptiveStall { time: f64, dt: f64 },
    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Step { .. } | Error::AdaptiveStall { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
