use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum DacError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples: need {required}, got {available}")]
    InsufficientSamples { required: usize, available: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("corrupt key file: {0}")]
    CorruptKey(String),

    #[error("incompatible key: {0}")]
    IncompatibleKey(String),

    #[error("message integrity check failed: {0}")]
    Integrity(String),

    #[error("malformed message: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DacError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DacError::InvalidArgument(msg.into()))
}
