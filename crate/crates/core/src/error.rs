use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("client {client} produced a non-finite gradient")]
    PoisonedGradient { client: usize },

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("ingestion error at byte offset {offset}: {message}")]
    Ingestion { offset: usize, message: String },

    #[error("divergence: loss {loss} exceeded 10x the initial loss {initial} at step {step}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("non-finite training loss at epoch {epoch}, round {round}; {snapshot}")]
    NonFiniteLoss {
        epoch: usize,
        round: usize,
        snapshot: String,
    },

    #[error("compression ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn ingestion(offset: usize, message: impl Into<String>) -> Self {
        Error::Ingestion {
            offset,
            message: message.into(),
        }
    }

    /// Stable machine-readable name, used by the service's JSON error body.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Protocol(_) => "protocol",
            Error::PoisonedGradient { .. } => "poisoned_gradient",
            Error::Config { .. } => "config",
            Error::Ingestion { .. } => "ingestion",
            Error::Divergence { .. } => "divergence",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::UndefinedRatio(_) => "undefined_ratio",
            Error::Comparison(_) => "comparison",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
