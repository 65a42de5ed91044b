use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("series contains a non-finite value at position {position}")]
    NonFinite { position: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("segment layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("singular design matrix: predictor {predictor} is collinear or constant")]
    SingularDesign { predictor: usize },

    #[error("model fitting did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("no model available: {0}")]
    MissingModel(String),

    #[error("bundle mismatch: {0}")]
    BundleMismatch(String),

    #[error("index file: {0}")]
    IndexFormat(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("repetition {repetition}: {source}")]
    Repetition {
        repetition: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
