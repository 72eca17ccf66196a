use std::path::PathBuf;

use thiserror::Error;
use tm3_core::Tm3Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{what}: expected {expected} entries, found {found}")]
    CountMismatch { what: &'static str, expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] Tm3Error),
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } | Self::Image { .. } => 2,
            Self::Csv { source, .. } if source.is_io_error() => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;
