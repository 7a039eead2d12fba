use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("i/o error on {path}: {source}")]
    IoAt { path: PathBuf, source: io::Error },

    #[error("value {0} does not fit in five bytes")]
    ValueTooLarge(u64),

    #[error("identifier space exhausted")]
    IdSpaceExhausted,

    #[error("empty table")]
    EmptyTable,

    #[error("value {value} does not fit in {width} byte(s)")]
    WidthOverflow { value: u64, width: u8 },

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("unknown term: {0}")]
    AbsentTerm(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("index {index} out of range (count {count})")]
    IndexOutOfRange { index: u64, count: u64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("input is not sorted: {0}")]
    Unsorted(String),

    #[error("database is locked by another process")]
    ConflictingWriter,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::IoAt { path, source }
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
        Error::Corrupt(msg.into())
    }

    /// Coarse failure category, used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_) | Error::IoAt { .. } | Error::Corrupt(_) | Error::Truncated(_) => ErrorCategory::Storage,
            Error::Parse { .. } => ErrorCategory::Parse,
            Error::ConflictingWriter => ErrorCategory::Busy,
            Error::ValueTooLarge(_)
            | Error::IdSpaceExhausted
            | Error::EmptyTable
            | Error::WidthOverflow { .. }
            | Error::Unsorted(_) => ErrorCategory::Storage,
            Error::AbsentTerm(_) | Error::InvalidRequest(_) | Error::IndexOutOfRange { .. } | Error::Config(_) => {
                ErrorCategory::Usage
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Parse,
    Storage,
    Busy,
}

impl ErrorCategory {
    /// Process exit status for the category.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::Parse => 3,
            ErrorCategory::Storage => 4,
            ErrorCategory::Busy => 5,
        }
    }
}
