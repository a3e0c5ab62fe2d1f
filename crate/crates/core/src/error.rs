use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (unknown variant, bad key, odd kernel...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes do not satisfy an operation's precondition.
    #[error("shape error: {0}")]
    Shape(String),

    /// A call violated an operation contract (empty split, missing stage, out-of-range epoch).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Dataset layout or content problems.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("failed to load weights from {source_name}: {reason}")]
    WeightLoad { source_name: String, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    /// Not enough memory (or other resources) for the requested work.
    #[error("resource error: {0}")]
    Resource(String),

    #[error("numerical failure at epoch {epoch}, step {step}: {detail}")]
    Numerical { epoch: usize, step: usize, detail: String },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Failure classes surfaced as process exit codes by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Resource,
    Numerical,
    Other,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Other => 1,
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Resource => 4,
            ErrorClass::Numerical => 5,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Checkpoint { .. } | Error::WeightLoad { .. } => {
                ErrorClass::Config
            }
            Error::Ingestion(_) | Error::Image(_) | Error::Io { .. } => ErrorClass::Data,
            Error::Resource(_) => ErrorClass::Resource,
            Error::Numerical { .. } => ErrorClass::Numerical,
            Error::Shape(_) | Error::Contract(_) | Error::Serde(_) => ErrorClass::Other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
