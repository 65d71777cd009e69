use std::path::Path;

use thiserror::Error;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, flags or input layout (exit code 2).
    #[error("{0}")]
    Config(String),
    /// A stage was requested before its prerequisites exist (exit code 3).
    #[error("{0}")]
    Order(String),
    /// Checkpoint and dataset or schema do not belong together (exit code 4).
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] tscan_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Order(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Core(tscan_core::Error::Config(_)) => 2,
            CliError::Core(tscan_core::Error::Checkpoint(_)) => 4,
            CliError::Core(_) => 1,
        }
    }

    pub fn config(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{}: {err}", path.display()))
    }
}
