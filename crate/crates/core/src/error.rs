use thiserror::Error;

/// Errors produced by the attribution toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("layer {index} ({layer}) does not compose: {reason}")]
    LayerMismatch {
        index: usize,
        layer: &'static str,
        reason: String,
    },

    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point lies in more than one region (pieces {first} and {second})")]
    OverlappingRegions { first: usize, second: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("baseline search failed: achieved logit distance {achieved_eps} exceeds {limit}")]
    BaselineFailed { achieved_eps: f64, limit: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("malformed image: {0}")]
    Image(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
