use std::path::PathBuf;

use thiserror::Error;

use crate::trainer::TraceRow;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error("benchmark entry `{entry}` failed integrity check: {message}")]
    Integrity { entry: String, message: String },

    #[error("training diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        trace: Vec<TraceRow>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
