use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants are split along the line the command-line runner cares about:
/// everything except [`Error::Diverged`] and [`Error::Io`] is a usage or budget
/// problem with the inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("token {token} is outside the vocabulary 1..={size}")]
    TokenOutOfRange { token: usize, size: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("state {0} has no masked position")]
    NothingMasked(String),

    #[error("expected a fully clean sequence, got {0}")]
    NotClean(String),

    #[error("position {position} of {state} is not masked")]
    PositionNotMasked { state: String, position: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("cannot parse sequence {input:?}: {reason}")]
    Parse { input: String, reason: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from invalid inputs or an exceeded budget, as
    /// opposed to a runtime failure.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
