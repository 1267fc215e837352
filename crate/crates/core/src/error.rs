use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data or parameters violate a precondition.
    #[error("{0}")]
    InvalidInput(String),

    /// A computation could not produce a finite, meaningful result.
    #[error("{0}")]
    Numeric(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

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

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI for error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "bad_input",
            Error::Numeric(_) => "numeric",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code: 2 for bad input of any kind, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
