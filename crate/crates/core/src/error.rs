use std::path::PathBuf;

use thiserror::Error;

use crate::thermo::Branch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("T = {t_k} K is outside the {branch:?} branch (triple point {t_triple_k} K)")]
    OutsideBranch {
        t_k: f64,
        branch: Branch,
        t_triple_k: f64,
    },
    #[error("volume calibration failed: {0}")]
    Calibration(String),
    #[error("thermal step did not stabilise with dt = {dt_s} s")]
    Unstable { dt_s: f64 },
    #[error("temperature solve did not converge: {0}")]
    NoConvergence(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilmError {
    #[error("invalid film input: {0}")]
    InvalidInput(String),
    #[error("film calibration failed: {0}")]
    Calibration(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonatorError {
    #[error("invalid resonator parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("rank deficient design: {0}")]
    RankDeficient(String),
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error(
        "shift {shift:e} is beyond the invertible range (maximum magnitude {max_magnitude:e})"
    )]
    Saturation { shift: f64, max_magnitude: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: line {line}, column {column}: {path}: {message}")]
    Parse {
        origin: String,
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Film(#[from] FilmError),
    #[error(transparent)]
    Resonator(#[from] ResonatorError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant violated at t = {t_s} s: {message}")]
    Invariant { t_s: f64, message: String },
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EngineError {
    /// Validation-class errors map to the CLI's "bad input" exit code.
    pub fn is_validation(&self) -> bool {
        matches!(self, EngineError::Validation(_) | EngineError::Config(_))
    }
}
