use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed scenario tree, measure or map (bad ids, missing nodes, weights off).
    #[error("structure error: {0}")]
    Structure(String),

    /// Inputs outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Exact transport refused because the support product exceeds the cap.
    #[error("support size {pairs} atom pairs exceeds cap {cap}")]
    Size { pairs: usize, cap: usize },

    /// A one-dimensional stage solve ran out of budget.
    #[error("stage solve did not converge after {iterations} iterations, last bracket [{lo}, {hi}]")]
    Numerical { iterations: usize, lo: f64, hi: f64 },

    /// Fixed-point iteration blew up.
    #[error("fixed-point iteration diverged after {} steps (last gap {})", gaps.len(), gaps.last().copied().unwrap_or(f64::NAN))]
    Divergence { gaps: Vec<f64> },

    /// The linear fixed-point system for the quadratic family is singular.
    #[error("degenerate model: {0}")]
    Degenerate(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Domain,
    Convergence,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Structure(_) | Error::DimensionMismatch { .. } => ErrorKind::Input,
            Error::Domain(_) | Error::Size { .. } | Error::Degenerate(_) => ErrorKind::Domain,
            Error::Numerical { .. } | Error::Divergence { .. } => ErrorKind::Convergence,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
