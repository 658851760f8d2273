use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RoarError>;

#[derive(Debug, Error)]
pub enum RoarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// One entry per offending field.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Precondition(String),
}

impl RoarError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        RoarError::InvalidArgument(msg.into())
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        RoarError::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RoarError::Io {
            path: path.into(),
            source,
        }
    }
}
