use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid threshold {0}: must be finite and non-negative")]
    InvalidThreshold(f64),

    #[error("unsupported scheme `{0}`")]
    UnsupportedScheme(String),

    #[error("forward cache error: {0}")]
    Cache(String),

    #[error("non-finite gradient in parameter `{param}` at index {index}")]
    Gradient { param: String, index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("need at least 2 code snapshots, have {0}")]
    InsufficientHistory(usize),

    #[error("all thresholds are zero; cannot normalize by the deadzone width")]
    DegenerateNormalization,

    #[error("invalid ternary code: {0}")]
    InvalidCode(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
