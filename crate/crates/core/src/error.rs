use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("label error at row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },

    #[error("duplicate sample id {id} at row {row}")]
    DuplicateId { id: u64, row: usize },

    #[error("stratification error: class {class:?} has {count} sample(s), need at least {needed}")]
    Stratification {
        class: String,
        count: usize,
        needed: usize,
    },

    #[error("fold error: class {class:?} has {count} sample(s), fewer than k = {k}")]
    Fold { class: String, count: usize, k: usize },

    #[error("stats error: {0}")]
    Stats(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("divergence: non-finite value in {0}")]
    Divergence(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown sample id {0}")]
    UnknownSample(u64),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
