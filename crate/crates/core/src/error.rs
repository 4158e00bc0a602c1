use std::fmt;

/// Errors raised by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("operation `{op}` is not supported by {model}")]
    Unsupported { op: &'static str, model: String },

    #[error("invalid chain state: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(NumericalDiagnostics),

    #[error("descriptor `{descriptor}`: {reason}")]
    Descriptor { descriptor: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What a failed numerical routine knew when it gave up.
#[derive(Debug, Clone)]
pub struct NumericalDiagnostics {
    pub routine: &'static str,
    pub message: String,
    pub estimate: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

impl fmt::Display for NumericalDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (estimate {:e}, error {:e}, {} evaluations)",
            self.routine, self.message, self.estimate, self.error_estimate, self.evaluations
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
