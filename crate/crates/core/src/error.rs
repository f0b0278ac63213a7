use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid of {grid_n} nodes per axis under-resolves the requested products (need at least {required})")]
    Resolution { grid_n: usize, required: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("invalid basis spec: {0}")]
    BasisSpec(String),

    #[error("tensor field is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    /// A physical or run-control constraint of the configuration was violated.
    #[error("{constraint}: {detail}")]
    Constraint { constraint: String, detail: String },

    /// The integrator produced a non-finite state.
    #[error("non-finite state at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("invalid noise model: {0}")]
    Noise(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn constraint(constraint: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Constraint {
            constraint: constraint.into(),
            detail: detail.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
