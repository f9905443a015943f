use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("wav codec error: {0}")]
    Wav(#[from] hound::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bitstream error: {0}")]
    Bitstream(String),

    /// An external tool the operation depends on is not installed.
    #[error("capability unavailable: {0}")]
    Capability(String),

    #[error("external command failed with exit code {code:?}: {stderr}")]
    Process { code: Option<i32>, stderr: String },

    #[error("could not parse tool output: {message}; stdout was {stdout:?}")]
    Parse { message: String, stdout: String },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A pipeline stage was invoked before the artifacts it needs exist.
    #[error("missing prerequisite: {0}")]
    Dependency(String),

    #[error("checkpoints disagree on {0}")]
    ConfigMismatch(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
