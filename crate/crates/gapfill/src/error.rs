use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] gapfill_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    /// A flag or configuration value failed validation.
    #[error("--{flag}: {message}")]
    Config { flag: String, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(flag: &str, message: impl Into<String>) -> Self {
        Self::Config { flag: flag.to_string(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 1 for rejected configuration, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 1,
            _ => 2,
        }
    }
}
