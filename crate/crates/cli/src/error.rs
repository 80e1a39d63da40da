use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] epimix_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(epimix_core::Error::Io(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            _ => "numerical",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

/// Printed to stderr as a single JSON line on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
}
