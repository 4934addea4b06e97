//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    /// A CSV row failed validation. `row` is 1-based.
    #[error("{reason} at row {row}")]
    MalformedRow { row: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("training diverged in {phase} (loss = {loss}); try a smaller learning rate")]
    Divergence { phase: String, loss: f64 },

    #[error("motif network {motif}: {source}")]
    MotifTraining {
        motif: usize,
        #[source]
        source: Box<ForgeError>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ForgeError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ForgeError::InvalidArgument(msg.into())
    }

    /// True when the error (or its cause) is a numeric divergence.
    pub fn is_numeric(&self) -> bool {
        match self {
            ForgeError::NonFinite { .. } | ForgeError::Divergence { .. } => true,
            ForgeError::MotifTraining { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, ForgeError::Io(_) | ForgeError::Csv(_) | ForgeError::MalformedRow { .. })
    }
}

pub type Result<T> = std::result::Result<T, ForgeError>;
