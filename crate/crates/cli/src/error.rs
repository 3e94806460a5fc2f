//! Errors carrying the process exit status.

use std::fmt;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_STAGE: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    /// An input that an earlier stage should have produced is missing.
    MissingStage { path: PathBuf, stage: &'static str },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::MissingStage { .. } => EXIT_STAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Data(e) => write!(f, "{e:#}"),
            Self::MissingStage { path, stage } => {
                write!(f, "{} not found; run `postocr {stage}` first", path.display())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::Data(e)
    }
}

impl From<postocr::Error> for CliError {
    fn from(e: postocr::Error) -> Self {
        Self::Data(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Fails with a stage-dependency error unless `path` exists.
pub fn require(path: PathBuf, stage: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingStage { path, stage })
    }
}
