use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid settings or mismatched shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that cannot be processed (too short, empty, non-finite).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// API called out of order or with inconsistent arguments.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training or inference produced non-finite numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("integrity check failed for {}: {detail}", path.display())]
    Integrity { path: PathBuf, detail: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn parse(what: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }
}
