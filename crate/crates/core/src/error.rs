use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("dims/payload mismatch: header declares {expected} samples, payload holds {actual}")]
    PayloadMismatch { expected: usize, actual: usize },

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape exceeds grid bounds: {0}")]
    OutOfBounds(String),

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at step {step} (last good checkpoint: {checkpoint:?})")]
    Diverged {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
