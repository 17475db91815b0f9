use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainHistory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: missing index", .0.display())]
    MissingIndex(PathBuf),

    #[error("{}: not a weight file", .0.display())]
    NotWeightFile(PathBuf),

    #[error("{}: unsupported weight file version {found} (reader supports {supported})", path.display())]
    Version { path: PathBuf, found: u32, supported: u32 },

    #[error("architecture mismatch: expected `{expected}`, found `{found}`")]
    ArchMismatch { expected: String, found: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Box<TrainHistory> },

    #[error("classifier parameters changed during generator training")]
    FrozenViolation,

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn shape(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::Shape { expected: expected.to_string(), found: found.to_string() }
    }

    /// Errors caused by bad user input rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec { .. }
                | Error::Config(_)
                | Error::MissingIndex(_)
                | Error::Format { .. }
                | Error::NotWeightFile(_)
                | Error::Version { .. }
                | Error::ArchMismatch { .. }
                | Error::Io { .. }
        )
    }
}
