use thiserror::Error;

/// Errors produced anywhere in the fitting and recombination pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at t = {time:.1} for draw {theta}")]
    NonFinite { time: f64, theta: String },

    #[error("posterior has no support under prior")]
    NoSupport,

    #[error("split '{scenario}' requires at least {required} distinct years, found {found}")]
    InsufficientYears {
        scenario: &'static str,
        required: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure originates in the input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Row { .. }
                | Error::MissingColumn(_)
                | Error::InsufficientYears { .. }
                | Error::Json(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NoSupport)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
