use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error("feature dimension mismatch: probe expects {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("non-finite training loss at epoch {epoch} (batch {batch}); try a lower learning rate than {lr}")]
    NonFinite { epoch: usize, batch: usize, lr: f64 },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("missing data: {0}")]
    Missing(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("malformed probe file: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] tspsense::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ProbeError {
    /// True for errors caused by user input rather than internal failures.
    pub fn is_validation(&self) -> bool {
        match self {
            ProbeError::Io(_) => false,
            ProbeError::Core(e) => e.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T, E = ProbeError> = std::result::Result<T, E>;
