use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid occupation: {0}")]
    InvalidOccupation(String),

    #[error("linear solve did not reach tolerance: relative residual {residual:e}")]
    LinearSolve { residual: f64 },

    #[error("eigensolver did not converge after {iterations} restarts (max residual {residual:e})")]
    EigenNotConverged { iterations: usize, residual: f64 },

    #[error("SCF did not converge after {iterations} iterations (last energy change {energy_change:e}, density change {density_change:e})")]
    ScfNotConverged {
        iterations: usize,
        energy_change: f64,
        density_change: f64,
    },

    #[error("Krylov breakdown at subspace dimension {dimension}")]
    KrylovBreakdown { dimension: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::LinearSolve { .. }
                | Error::EigenNotConverged { .. }
                | Error::ScfNotConverged { .. }
                | Error::KrylovBreakdown { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
