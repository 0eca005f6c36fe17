use thiserror::Error;

/// Errors raised across the operator-learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Cholesky factorization of the {what} ({size}x{size}) failed; {advice}")]
    Factorization {
        what: &'static str,
        size: usize,
        advice: &'static str,
    },

    #[error("point {0:?} is not present in the sample grid")]
    MissingPoint(Vec<f64>),

    #[error("truth sample {0} has zero norm")]
    ZeroNorm(usize),

    #[error("solver produced a non-finite state for sample {0}")]
    BlowUp(usize),

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn gram_factorization(size: usize) -> Self {
        Error::Factorization {
            what: "kernel Gram matrix",
            size,
            advice: "increase the nugget",
        }
    }

    pub(crate) fn ridge_factorization(size: usize) -> Self {
        Error::Factorization {
            what: "regularized Gram matrix",
            size,
            advice: "increase gamma",
        }
    }
}
