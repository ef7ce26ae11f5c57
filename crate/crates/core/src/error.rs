use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// The variants are grouped so that callers can tell modelling problems
/// (bad parameters, violated hypotheses) apart from numerical failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("under-resolved grid: {0}")]
    Resolution(String),

    #[error("kalman rank deficient: rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("stage coupling violated: {0}")]
    StageCoupling(String),

    #[error("Carleman weight is singular at t = {0}")]
    SingularWeight(f64),
}

impl Error {
    /// True for errors that reflect the model rather than the numerics.
    pub fn is_hypothesis(&self) -> bool {
        matches!(
            self,
            Error::NotControllable { .. } | Error::HypothesisViolation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
