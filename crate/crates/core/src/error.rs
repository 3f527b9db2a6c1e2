use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid record `{id}`: {reason}")]
    Validation { id: String, reason: String },

    #[error("degenerate input: vector norm {norm:e} is below {epsilon:e}")]
    DegenerateInput { norm: f64, epsilon: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss {value} at step {step} (learning rate {learning_rate})")]
    Divergence {
        step: usize,
        learning_rate: f64,
        value: f64,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
