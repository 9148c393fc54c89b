use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad error classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Io,
    Schema,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("length mismatch in {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("skeleton definition: {0}")]
    Skeleton(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: {message}")]
    Record { id: String, message: String },

    #[error("sample {sample}: no joints present in both poses")]
    NoCommonJoints { sample: usize },

    #[error("schedule step {step} exceeds total {total}")]
    ScheduleOverrun { step: usize, total: usize },

    #[error("loss diverged at step {step}")]
    Diverged { step: usize },

    #[error("{what} {value:e} exceeds tolerance {limit:e}")]
    Tolerance {
        what: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("every loss term is excluded")]
    NoLossTerms,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io(_) | Error::File { .. } => ErrorCategory::Io,
            Error::Parse { .. }
            | Error::Record { .. }
            | Error::Skeleton(_)
            | Error::LengthMismatch { .. } => ErrorCategory::Schema,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::NoLossTerms | Error::Tolerance { .. } => {
                ErrorCategory::Numeric
            }
            Error::InvalidArgument(_) | Error::ScheduleOverrun { .. } => ErrorCategory::Usage,
            Error::OutOfRange { .. } | Error::Empty(_) | Error::NoCommonJoints { .. } => {
                ErrorCategory::Schema
            }
        }
    }

    /// Attach a file path to a bare I/O error; other errors pass through.
    pub fn at_path(self, path: impl AsRef<std::path::Path>) -> Self {
        match self {
            Error::Io(source) => Error::File {
                path: path.as_ref().to_path_buf(),
                source,
            },
            other => other,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            actual,
        })
    }
}
