use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("age group {0} is out of range")]
    InvalidGroup(i64),

    #[error("interpolation weight {0} is outside [0, 1]")]
    InvalidAlpha(f64),

    #[error("invalid age {0}")]
    InvalidAge(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape regularization needs reference group 4 and target group 5, got {reference} -> {target}")]
    InvalidGroupPair { reference: usize, target: usize },

    #[error("non-finite loss in component `{0}`")]
    NonFiniteLoss(String),

    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("backend: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
