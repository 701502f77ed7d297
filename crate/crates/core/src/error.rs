use thiserror::Error;

/// Errors raised while building bases, meshes, operators or running solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid polynomial degree {0}: must be at least 1")]
    InvalidDegree(usize),

    #[error("invalid quadrature size {0}: must be at least 1")]
    InvalidQuadrature(usize),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular matrix in {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("iterative solver did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("non-finite state after step {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
