//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape inference over a model spec failed.
    #[error("shape inference failed at layer {layer} ({kind}): {reason}")]
    ShapeInference {
        layer: usize,
        kind: String,
        reason: String,
    },

    /// A weight or task vector does not match the expected parameter layout.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// Invalid argument or configuration value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Invalid data passed to an operation (bad pixel range, bad label, empty set).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Training aborted because the loss became non-finite.
    #[error("non-finite loss at epoch {epoch}, step {step}; loss history: {history:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        history: Vec<f64>,
    },

    /// Trigger inversion aborted because the objective became non-finite.
    #[error("non-finite inversion objective at step {step}")]
    NonFiniteObjective { step: usize },

    /// A binary artifact file failed to parse.
    #[error("file format error in {path}: {reason}")]
    FileFormat { path: String, reason: String },

    /// Payload checksum did not match.
    #[error("checksum mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        path: String,
        stored: u32,
        computed: u32,
    },

    /// A recipe phase failed; the partial bundle has been preserved.
    #[error("recipe phase '{phase}' failed: {source}")]
    PhaseFailed {
        phase: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
