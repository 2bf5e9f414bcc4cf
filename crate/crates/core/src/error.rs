use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ChiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ChiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed input file: wrong field count, bad numbers, duplicate names.
    #[error("{0}")]
    Load(String),

    /// Value outside the domain of a transform (e.g. negative under log1p).
    #[error("domain error at row {row}, column '{column}': {message}")]
    Domain {
        row: usize,
        column: String,
        message: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    /// A caller broke a function precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training: {0}")]
    Training(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ChiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ChiError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input (files, schemas, arguments)
    /// rather than by a failing computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, ChiError::Training(_) | ChiError::Contract(_))
    }
}
