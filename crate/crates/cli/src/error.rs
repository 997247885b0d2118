use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure in {module}: {message}\n{report}")]
    Numerical { module: &'static str, message: String, report: String },

    #[error("verification mismatch: {0}")]
    Mismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Mismatch(_) => 4,
        }
    }

    pub fn numerical(module: &'static str, err: twistlab_core::Error) -> Self {
        CliError::Numerical { module, message: err.to_string(), report: format!("{err:?}") }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;
