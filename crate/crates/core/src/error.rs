use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("t = {t} is outside the kernel domain [0, {max}]")]
    Domain { t: f64, max: f64 },

    #[error("event times must be sorted and strictly before the evaluation time")]
    UnsortedEvents,

    #[error("unsupported transfer function: {0}")]
    UnsupportedTransfer(String),

    #[error("scheme `{scheme}` requires an exponential kernel")]
    SchemeMismatch { scheme: &'static str },

    #[error("step size {step} is not contractive (contraction factor {factor:.3} >= 1)")]
    StepSize { step: f64, factor: f64 },

    #[error("{0}")]
    State(String),

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::param(name, format!("{value} is not a probability in [0, 1]")))
    }
}
