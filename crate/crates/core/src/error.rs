use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity exceeded: {needed} ground truths do not fit in {capacity} queries")]
    Capacity { needed: usize, capacity: usize },

    #[error("brute-force matching refuses {n_gt} ground truths (limit {limit})")]
    TooLarge { n_gt: usize, limit: usize },

    #[error("infeasible holdout: {0}")]
    Infeasible(String),

    #[error("parse error in {path} line {line} ({locus}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        locus: String,
        message: String,
    },

    #[error("checkpoint incompatible with run config:\n{0}")]
    Incompatible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
