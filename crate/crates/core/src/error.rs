use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model `{model}` does not support {capability}")]
    Unsupported { model: String, capability: String },

    #[error("simulation diverged in replicate {replicate} at step {step} (t = {time}): particle {particle} is not finite")]
    Diverged {
        replicate: u64,
        step: usize,
        time: f64,
        particle: usize,
    },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(f64),

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("experiment `{experiment}` failed during {stage}: {source}")]
    Experiment {
        experiment: String,
        stage: String,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn unsupported(model: &str, capability: &str) -> Self {
        Error::Unsupported {
            model: model.to_string(),
            capability: capability.to_string(),
        }
    }

    pub(crate) fn dims(context: &str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(format!("csv: {e}"))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
