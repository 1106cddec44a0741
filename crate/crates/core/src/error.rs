use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type. CLI exit codes are derived from the variant class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite {what}: {context}")]
    NonFinite { what: &'static str, context: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("scene constraints unsatisfiable after {attempts} placement attempts")]
    Unsatisfiable { attempts: usize },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("diverged at step {step}: loss {loss:.3e} stayed above 10x initial ({initial:.3e}) for {window} steps")]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
        window: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error("safetensors: {0}")]
    SafeTensors(#[from] safetensors::SafeTensorError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
