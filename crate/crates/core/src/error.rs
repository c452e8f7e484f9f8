use alloc::string::String;
use core::fmt;

/// Errors raised by the core simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector did not have the length its parameters require.
    DimensionMismatch { expected: usize, found: usize },
    /// A configuration value violated its invariant.
    Config { field: &'static str, reason: String },
    /// A value that must be finite was NaN or infinite.
    NonFinite { what: &'static str },
    /// `privatize_batch` was called with no per-example gradients.
    EmptyBatch,
    /// Training produced a non-finite or exploding parameter.
    Diverged { round: usize },
    /// A report cell is missing or has the wrong number of users.
    IncompleteReport { cell: String },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Config { field, reason } => write!(f, "invalid `{field}`: {reason}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::EmptyBatch => f.write_str("empty gradient batch"),
            Error::Diverged { round } => write!(f, "training diverged at round {round}"),
            Error::IncompleteReport { cell } => write!(f, "incomplete report cell {cell}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
