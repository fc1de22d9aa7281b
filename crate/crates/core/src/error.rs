use thiserror::Error;

/// Errors raised by the numeric kernels, the model and the training harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate batch: {valid} valid frame(s), at least 2 are required for batch statistics")]
    DegenerateBatch { valid: usize },

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("batching: {0}")]
    Batching(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint parameter `{param}`: {msg}")]
    CheckpointParam { param: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
