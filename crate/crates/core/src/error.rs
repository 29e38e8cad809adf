use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state is already final")]
    AlreadyFinal,

    #[error("illegal transition {action} at step {step} (state: {state})")]
    IllegalTransition {
        step: usize,
        action: String,
        state: String,
    },

    #[error("malformed derivation at step {step}: {reason}")]
    MalformedDerivation { step: usize, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sentence {sentence}: gold and predicted words differ")]
    Alignment { sentence: usize },

    #[error("generation exceeded {max_len} words; sample discarded")]
    Truncated { max_len: usize },

    #[error("non-finite loss at step {step} (instance {instance}); parameter norms: {norms}")]
    NonFinite {
        step: usize,
        instance: usize,
        norms: String,
    },

    #[error("non-finite probabilities at step {step}")]
    NonFiniteDistribution { step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numeric failures, as opposed to bad input or usage.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteDistribution { .. }
        )
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
