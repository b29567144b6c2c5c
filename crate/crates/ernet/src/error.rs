//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected {expected} channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("missing gradient for parameter '{0}'")]
    MissingGradient(String),

    #[error("non-finite loss at iteration {iteration}: {value}")]
    NonFiniteLoss { iteration: u64, value: f64 },

    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What went wrong while decoding a volume, transform, or checkpoint file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes (expected {expected})")]
    BadMagic { expected: &'static str },
    #[error("file truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io(path.into(), err)
    }

    pub fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            kind,
        }
    }
}
