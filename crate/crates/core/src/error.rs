use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("ingest of `{project}` ({}) failed: {source}", repo.display())]
    Ingest {
        project: String,
        repo: PathBuf,
        #[source]
        source: git2::Error,
    },

    #[error("invalid sha1 `{0}`")]
    InvalidSha1(String),

    #[error("malformed record in {context}: `{record}`")]
    MalformedRecord { context: String, record: String },

    #[error("unsorted input in {context} at record {position}")]
    Unsorted { context: String, position: u64 },

    #[error("unknown project `{0}`")]
    UnknownProject(String),

    #[error("commit parent cycle through {0}")]
    ParentCycle(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{0}` has not completed; run it first")]
    MissingStage(&'static str),

    #[error("corpus too large for the oracle: {commits} commits exceeds the limit of {limit}")]
    OracleTooLarge { commits: usize, limit: usize },

    #[error("oracle: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attaches a path to bare `io::Error`s.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
