use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below -{threshold:e}")]
    NotPsd { eigenvalue: f64, threshold: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// `Range(C1_0) ⊄ Range(D1)`; carries the first offending column of `C1_0`.
    #[error("system not reducible: column {column} of C1_0 is outside Range(D1)")]
    NotReducible { column: usize, witness: DVector<f64> },

    #[error("synthesis unavailable: {0}")]
    SynthesisUnavailable(String),

    #[error("unsupported Hermite degree {degree} (maximum {max})")]
    UnsupportedDegree { degree: usize, max: usize },

    #[error("infeasible terminal mean: {0}")]
    InfeasibleMean(String),

    #[error("infeasible variance {requested:e}: admissible range is [0, {max:e}]")]
    InfeasibleVariance { requested: f64, max: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
