//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by the simulator, the learning stack and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameters or configuration keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// Scene generation could not satisfy a constraint.
    #[error("scene generation failed: {0}")]
    Generation(String),

    /// Shape or dimension mismatch between an input and a net.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite loss, gradient or parameter during training.
    #[error("training diverged: {0}")]
    Training(String),

    /// An operation was invoked before its prerequisite stage ran.
    #[error("staging error: {0}")]
    Staging(String),

    /// A documented precondition does not hold (for example an empty buffer).
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Malformed text input (checkpoint, scene, config or CSV).
    #[error("parse error at {location} line {line}: {message}")]
    Parse {
        location: String,
        line: usize,
        message: String,
    },

    /// Filesystem failure tied to a path.
    #[error("file error for {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this error class. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Parse { .. } => 4,
            Error::Training(_) => 5,
            Error::Generation(_) => 6,
            Error::Contract(_) => 7,
            Error::Staging(_) => 8,
            Error::Precondition(_) => 9,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
