use thiserror::Error;

/// Errors raised while building, solving or certifying a relaxation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian (max asymmetry {max_asymmetry:.3e})")]
    NotHermitian { max_asymmetry: f64 },

    #[error("invalid multi-index: {0}")]
    Index(String),

    #[error("symmetric mode requires equal local dimensions, got {0:?}")]
    UnequalDims(Vec<usize>),

    #[error("tensor is not permutation symmetric (max deviation {max_deviation:.3e})")]
    NotSymmetric { max_deviation: f64 },

    #[error("invalid ensemble: {0}")]
    Ensemble(String),

    #[error("degree {needed} exceeds the available degree {available}")]
    Degree { needed: usize, available: usize },

    #[error("invalid relaxation order: {0}")]
    Order(String),

    #[error("malformed problem: {0}")]
    Problem(String),

    #[error("extraction failed: {0}")]
    Extraction(String),

    #[error("malformed certificate: {0}")]
    Certificate(String),

    #[error("unsound certificate: {0}")]
    Unsound(String),

    #[error("schema violation at `{path}`: {msg}")]
    Schema { path: String, msg: String },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
