use std::io;

use thiserror::Error;

/// Errors produced anywhere in the codec library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} is {got}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid shape in {op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("corrupt deflate stream at byte offset {offset}: {reason}")]
    CorruptStream { offset: usize, reason: String },

    #[error("bad {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            reason: reason.into(),
        }
    }
}
