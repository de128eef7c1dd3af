use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class. The CLI maps each to an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Training,
    Inference,
    Usage,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Training => "training",
            ErrorCategory::Inference => "inference",
            ErrorCategory::Usage => "usage",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Shape { .. } => ErrorCategory::Config,
            Error::Data(_) | Error::Parse { .. } | Error::Checkpoint(_) | Error::Io { .. } => {
                ErrorCategory::Data
            }
            Error::Json(_) => ErrorCategory::Data,
            Error::Training(_) => ErrorCategory::Training,
            Error::Inference(_) => ErrorCategory::Inference,
            Error::Usage(_) => ErrorCategory::Usage,
        }
    }
}
