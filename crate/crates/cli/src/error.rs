use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    /// Some items failed while the rest of the output was written.
    #[error("{0}")]
    Partial(String),

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Partial(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<tspsense::Error> for CliError {
    fn from(e: tspsense::Error) -> Self {
        match e {
            tspsense::Error::Io(io) => io.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<tspsense_probes::ProbeError> for CliError {
    fn from(e: tspsense_probes::ProbeError) -> Self {
        match e {
            tspsense_probes::ProbeError::Io(io) => io.into(),
            e if e.is_validation() => CliError::Validation(e.to_string()),
            e => CliError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            // a path the user typed that does not exist is their mistake
            std::io::ErrorKind::NotFound => CliError::Validation(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Internal(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
