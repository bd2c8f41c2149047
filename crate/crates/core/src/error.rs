use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("segmentation failed at stage `{stage}`")]
    Segmentation { stage: &'static str },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("cannot load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("recognition rate undefined for class {class}: no test items")]
    UndefinedRate { class: usize },

    #[error("prediction failed at stage `{stage}`: {source}")]
    Prediction {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
