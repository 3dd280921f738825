use crate::autodiff::AdError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample covariance is singular")]
    SingularCovariance,
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite value in term `{term}`")]
    NonFiniteTerm { term: &'static str },
    #[error("parameters belong to a different density family or flow")]
    FamilyMismatch,
    #[error("quadrature did not converge")]
    Quadrature,
}
