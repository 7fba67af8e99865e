use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration value is inconsistent with the data it is applied to.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input violates a documented precondition (for example an
    /// unnormalized cube handed to a degradation operator).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed or unsupported file contents.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A loss or intermediate went non-finite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("backward called on a tape that was already consumed")]
    StaleTape,

    /// Wraps a failure with the pipeline stage it happened in.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Contract(_) | Error::Shape(_) => {
                ErrorClass::Config
            }
            Error::Format { .. } | Error::Io { .. } | Error::Json(_) => ErrorClass::Data,
            Error::Numeric(_) | Error::StaleTape => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
        }
    }

    /// 2 = configuration error, 3 = data error, 4 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
