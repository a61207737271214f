use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The first curation iteration produced too few successes to estimate a tube,
    /// and there is no previous tube to fall back on.
    #[error("tube unavailable: {successes} successful rollouts (need at least {required})")]
    TubeUnavailable { successes: usize, required: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("every spatial variant was skipped; no curated trajectories were produced")]
    AllVariantsFailed,

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
