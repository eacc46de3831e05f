use std::path::PathBuf;

use thiserror::Error;

use crate::grid::GridSpec;

/// Errors raised by the masking harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),

    #[error("rectangle {rect} is degenerate or outside the {width}x{height} area")]
    RectOutOfBounds {
        rect: String,
        width: u32,
        height: u32,
    },

    #[error("expected a mask on grid {expected}, found {found}")]
    GridMismatch { expected: GridSpec, found: GridSpec },

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("unknown strategy preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid redaction rule for {category}: {reason}")]
    InvalidRule { category: String, reason: String },

    #[error("unknown backend `{0}`")]
    UnknownBackend(String),

    #[error("invalid document {id}: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("malformed record in {path}, line {line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
