//! Error type shared across the workspace.
//!
//! Variants are grouped by how the CLI maps them to exit codes: usage and
//! configuration problems (exit 2) versus numeric failures such as NaN
//! losses (exit 3).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite values or diverging computations.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid configuration values (unknown family, bad ranges, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid argument to an operation (empty list, out-of-range index).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Operation not valid in the current state (e.g. stepping a finished
    /// episode).
    #[error("state error: {0}")]
    State(String),

    /// A file failed to parse; names the file and 1-based line.
    #[error("parse error at {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI should use for this error: 2 for usage/config
    /// problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
