use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {requested} exceeds capacity {cap}")]
    Capacity { requested: usize, cap: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is not Hermitian (residual {residual:e}, allowed {allowed:e})")]
    NotHermitian { residual: f64, allowed: f64 },

    #[error("numerical failure: {what} (residual {residual:e})")]
    Numerical { what: String, residual: f64 },

    #[error("function undefined on spectrum: {0}")]
    Domain(String),

    #[error("'{name}' does not commute with '{other}' (commutator norm {norm:e}, allowed {allowed:e})")]
    Commutation { name: String, other: String, norm: f64, allowed: f64 },

    #[error("time-reversal violation: {what} has imaginary part {residual:e} in the computational basis")]
    TimeReversal { what: String, residual: f64 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("target moments are not strictly inside the moment polytope: {0}")]
    InfeasibleTarget(String),

    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("ill-conditioned state: condition number {condition:e} exceeds {limit:e}; reduce the magnitude of the generalized temperatures")]
    Conditioning { condition: f64, limit: f64 },

    #[error("degenerate subspace could not be resolved (residual {residual:e})")]
    Degeneracy { residual: f64 },

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Errors caused by the experiment description rather than by numerics:
    /// malformed configs, invalid models, unattainable targets.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InfeasibleTarget(_)
                | Error::Commutation { .. }
                | Error::TimeReversal { .. }
                | Error::Model(_)
                | Error::Range(_)
                | Error::Capacity { .. }
                | Error::DimensionMismatch(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
