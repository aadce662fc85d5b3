use std::path::PathBuf;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unreadable or unsupported image file.
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    /// Malformed binary database or result file.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Malformed CSV input.
    #[error("{}: {message}", path.display())]
    Table { path: PathBuf, message: String },
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

    pub(crate) fn table(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Table {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
