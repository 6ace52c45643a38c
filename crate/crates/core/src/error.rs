//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by tensor ops, the raw pipeline, model I/O and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor arguments whose shapes cannot be combined.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A single tensor whose dimensions violate an op precondition.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An out-of-range or inconsistent parameter value.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// API contract violation (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed file contents (tensor container, checkpoint, manifest, config).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// A referenced file does not exist.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
