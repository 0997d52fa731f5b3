use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value at batch index {index}: {context}")]
    NonFinite { index: usize, context: String },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("divergence at iteration {iteration}: loss {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing file {}", .0.display())]
    Missing(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. }
            | Error::NonFinite { .. }
            | Error::NonFiniteState { .. }
            | Error::NotConverged { .. } => 3,
            _ => 2,
        }
    }

    /// Short machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite { .. } | Error::NonFiniteState { .. } => "non_finite",
            Error::Divergence { .. } => "divergence",
            Error::NotConverged { .. } => "not_converged",
            Error::Config(_) => "config",
            Error::Missing(_) => "missing",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
