use std::path::PathBuf;

use pathosr_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{id}`: {message}")]
    Load { id: String, message: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::trainer::CheckpointError),

    #[error("non-finite {loss} at iteration {iteration}")]
    NonFinite { loss: &'static str, iteration: u64 },

    #[error("{0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Shape(msg) => Error::Shape(msg),
        }
    }
}
