use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty stream")]
    EmptyStream,

    #[error("empty key list")]
    EmptyKeys,

    #[error("pooled representative has zero norm")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid k-means request: k={k} with {points} points")]
    InvalidClusterCount { k: usize, points: usize },

    #[error("spans do not tile the token sequence: {0}")]
    BadSpans(String),

    #[error("empty index")]
    EmptyIndex,

    #[error("empty active set")]
    EmptyActiveSet,

    #[error("empty oracle set")]
    EmptyOracle,

    #[error("non-sequential token id: expected {expected}, got {got}")]
    NonSequentialId { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
