use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{}", located(path, *line, reason))]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("{}:{line}: feature index {index} is outside the declared dimension {dim}", path.display())]
    Dimension {
        path: PathBuf,
        line: usize,
        index: usize,
        dim: usize,
    },

    #[error("{cell}: training diverged at round {round}")]
    Diverged { cell: String, round: usize },

    #[error("{cell}: {source}")]
    Training {
        cell: String,
        #[source]
        source: flde_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

fn located(path: &Path, line: usize, reason: &str) -> String {
    if line == 0 {
        format!("{}: {reason}", path.display())
    } else {
        format!("{}:{line}: {reason}", path.display())
    }
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a core error raised while training or evaluating `cell`.
    pub fn training(cell: impl Into<String>, source: flde_core::Error) -> Self {
        let cell = cell.into();
        match source {
            flde_core::Error::Diverged { round } => Error::Diverged { cell, round },
            source => Error::Training { cell, source },
        }
    }

    /// Process exit status: 2 for bad input, 3 for numerical failure, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::Dimension { .. } => 2,
            Error::Diverged { .. } => 3,
            Error::Training { source, .. } => match source {
                flde_core::Error::NonFinite { .. } | flde_core::Error::Diverged { .. } => 3,
                _ => 2,
            },
            Error::Io { .. } | Error::Csv { .. } => 4,
        }
    }
}

/// Prefixes a core configuration error's field with its config section.
pub(crate) fn in_section(section: &str, err: flde_core::Error) -> Error {
    match err {
        flde_core::Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
        other => Error::config(section, other.to_string()),
    }
}
