//! Error type shared by every solver layer.

use thiserror::Error;

/// Failures surfaced by geometry, solvers, integrators and scenario loading.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates an operation's contract (non-positive scale, bad index, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Boundary data violates a compatibility condition (for example a non-zero net flux).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A dense linear system could not be solved reliably.
    #[error("solver failure: {message} (condition estimate {condition:.3e})")]
    SolverFailure { message: String, condition: f64 },

    /// The reflection fixed point did not contract.
    #[error("reflection iteration failed to contract after {sweeps} sweeps (last ratio {ratio:.3e})")]
    ContractionFailure { sweeps: usize, ratio: f64 },

    /// The configuration left the admissible set (collision or loss of separation).
    #[error("admissibility breach at t = {time}: margin {margin:.3e} ({detail})")]
    Breach { time: f64, margin: f64, detail: String },

    /// A scenario failed validation; `path` names the offending field.
    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    /// Scenario text could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    /// Filesystem failure.
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
