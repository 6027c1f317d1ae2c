use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Model,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{name}` has dims {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("not an LSW1 archive (bad magic)")]
    BadMagic,

    #[error("archive checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("archive truncated: {0}")]
    Truncated(String),

    #[error("duplicate tensor name `{0}` in archive")]
    DuplicateName(String),

    #[error("invalid archive entry: {0}")]
    InvalidEntry(String),

    #[error("rename target `{0}` collides with an existing entry")]
    RenameCollision(String),

    #[error("rename source `{0}` not present in archive")]
    RenameSource(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Usage,
            Error::MissingParam(_)
            | Error::ParamShape { .. }
            | Error::BadMagic
            | Error::CrcMismatch { .. }
            | Error::Truncated(_)
            | Error::DuplicateName(_)
            | Error::InvalidEntry(_)
            | Error::RenameCollision(_)
            | Error::RenameSource(_)
            | Error::Shape(_) => ErrorCategory::Model,
            Error::Image(_)
            | Error::Manifest { .. }
            | Error::Dataset(_)
            | Error::Metric(_)
            | Error::Training(_)
            | Error::Io { .. }
            | Error::Json(_) => ErrorCategory::Data,
        }
    }
}
