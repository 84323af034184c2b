//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the shell solver pipeline.
#[derive(Error, Debug)]
pub enum KlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate tangent plane at xi = ({0}, {1})")]
    SingularGeometry(f64, f64),

    #[error("nonconforming patch interface: {0}")]
    NotSupported(String),

    #[error("invalid solver setup: {0}")]
    InvalidSetup(String),

    #[error("singular system in block {block}: {detail}")]
    SingularSystem { block: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, KlError>;

impl KlError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        KlError::Io {
            path: path.into(),
            source,
        }
    }
}
