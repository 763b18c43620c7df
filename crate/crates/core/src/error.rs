use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition (bad price, unsorted dates, ...).
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    /// An estimator could not produce a usable fit.
    #[error("fit error ({model}): {reason}")]
    Fit { model: String, reason: String },

    /// A state the walk-forward protocol should never reach.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("configuration error ({key}): {reason}")]
    Config { key: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn fit(model: &str, reason: impl Into<String>) -> Self {
        Error::Fit {
            model: model.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied data or configuration
    /// (exit code 1) rather than runtime failures (exit code 2).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::RejectedInput(_)
                | Error::Alignment(_)
                | Error::Config { .. }
                | Error::InvalidInput(_)
                | Error::Io { .. }
                | Error::Csv { .. }
        )
    }
}
