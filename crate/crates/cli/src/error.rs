use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line harness.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, inconsistent problem data or a solver-level failure.
    #[error("{0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<foac_core::Error> for CliError {
    fn from(e: foac_core::Error) -> Self {
        match e {
            foac_core::Error::Io { path, source } => CliError::Io {
                path: path.into(),
                source,
            },
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
