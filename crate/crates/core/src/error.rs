use thiserror::Error;

/// Errors raised by the pricing engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its contract.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A state point lies outside the model's admissible region.
    #[error("point outside domain: {0}")]
    OutOfDomain(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training diverged at the given time step and sampling stage.
    #[error("training diverged at time step {step}, stage {stage}: {reason}")]
    Diverged {
        step: usize,
        stage: usize,
        reason: String,
    },

    /// Every point of a training batch was masked out.
    #[error("empty active set at time step {step}, stage {stage}")]
    EmptyActiveSet { step: usize, stage: usize },

    /// Checkpoint file is malformed or incompatible.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::EmptyActiveSet { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
