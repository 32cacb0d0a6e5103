use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {context} at {location}: {message}")]
    Format {
        context: String,
        location: String,
        message: String,
    },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format_at_line(context: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            location: format!("line {line}"),
            message: msg.into(),
        }
    }

    pub(crate) fn format_at_offset(context: impl Into<String>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            location: format!("byte offset {offset}"),
            message: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Format { .. } | Error::Consistency(_) | Error::Config(_)
        )
    }
}
