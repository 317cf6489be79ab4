use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Factorization or density evaluation produced non-finite values.
    #[error("non-finite model: {0}")]
    NonFiniteModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("Sobol dimension {requested} exceeds the direction-number table limit of {limit}")]
    SobolDimension { requested: usize, limit: usize },

    #[error("posterior sample set is empty")]
    EmptySamples,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
