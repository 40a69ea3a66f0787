use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum BroError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },

    #[error("degenerate input in {op}: {reason}")]
    Degenerate { op: &'static str, reason: String },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("configuration error for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BroError {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        BroError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn degenerate(op: &'static str, reason: impl Into<String>) -> Self {
        BroError::Degenerate {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BroError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        BroError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = BroError> = std::result::Result<T, E>;
