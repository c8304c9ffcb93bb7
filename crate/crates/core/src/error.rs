use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("instance needs at least {min} nodes, got {got}")]
    InvalidSize { got: usize, min: usize },

    #[error("coordinate at index {index} is outside [0,1]^2: ({x}, {y})")]
    CoordinateOutOfRange { index: usize, x: f64, y: f64 },

    #[error("node index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),

    #[error("exact solver handles at most {max} active nodes, got {got}; use solve_heuristic for larger instances")]
    SizeLimit { got: usize, max: usize },

    #[error("no tour avoids every forbidden edge (best cost {cost:.4} reaches the forbid penalty)")]
    Infeasible { cost: f64 },

    #[error("invalid tour: {0}")]
    InvalidTour(String),

    #[error("candidate {candidate}: {source}")]
    Candidate {
        candidate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than IO or internal faults.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
