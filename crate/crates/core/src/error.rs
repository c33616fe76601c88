use thiserror::Error;

/// Errors produced anywhere in the training engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("series of length {len} is too short, need at least {min} points")]
    SeriesTooShort { len: usize, min: usize },

    #[error("{part} partition holds {len} points but a window needs {needed}")]
    PartitionTooShort {
        part: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("expected input of length {expected}, got {got}")]
    InputLength { expected: usize, got: usize },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("kernel {kernel} has no valid level tag (got {level})")]
    MissingLevel { kernel: String, level: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
