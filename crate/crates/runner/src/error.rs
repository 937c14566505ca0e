use std::io;
use std::path::Path;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] tdks_core::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("manifest: {0}")]
    Manifest(String),
}

impl RunnerError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        RunnerError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 config or input, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 1,
            RunnerError::Core(e) if e.is_numerical() => 2,
            RunnerError::Core(tdks_core::Error::Io(_) | tdks_core::Error::Checkpoint(_)) => 3,
            RunnerError::Core(_) => 1,
            RunnerError::Io { .. } | RunnerError::Manifest(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;
