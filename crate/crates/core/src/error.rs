use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed text input. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Binary or header-level format problem (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A value violates a documented invariant.
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    /// Degenerate geometry (too few points, collinear clouds, empty regions).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
