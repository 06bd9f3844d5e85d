use thiserror::Error;

/// Errors produced by the sparse Bayesian learning toolkit.
#[derive(Debug, Error)]
pub enum SblError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The response is constant, so the noise variance cannot be initialised.
    #[error("response has zero variance")]
    ConstantResponse,

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// Cholesky factorisation of the active-set posterior precision failed.
    #[error("posterior precision is not positive definite (active columns {0:?})")]
    CholeskyFailed(Vec<usize>),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SblError {
    /// True for failures that originate in the input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            SblError::Data(_) | SblError::Io(_) | SblError::Csv(_) | SblError::ConstantResponse
        )
    }
}

pub type Result<T> = std::result::Result<T, SblError>;
