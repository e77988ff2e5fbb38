use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (shape mismatch, out-of-range
    /// class index, non-finite value, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A value that must stay finite became NaN or infinite.
    #[error("invalid input: {0}")]
    NonFinite(String),

    /// A file did not conform to the expected format.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An operation needs data the dataset does not carry (e.g. true labels).
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    /// A function handed to a numeric routine returned NaN or infinity.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Diverged {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
