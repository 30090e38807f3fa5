use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input contents (exit code 1).
    #[error("{0}")]
    Validation(String),

    /// Malformed binary input (exit code 1).
    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] clear_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for problems with what the user supplied, 2 for failures while
    /// running.
    pub fn exit_code(&self) -> i32 {
        use clear_core::Error as E;
        match self {
            CliError::Validation(_) | CliError::Format(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                E::NonFinite { .. } => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
