use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("duplicate candidate token {0}")]
    DuplicateCandidate(usize),

    #[error("candidate {index} out of range (limit {limit})")]
    CandidateOutOfRange { index: usize, limit: usize },

    #[error("token {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("non-finite value in {0}")]
    NonFiniteValue(String),

    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("empty score vector")]
    EmptyScores,

    #[error(
        "prior-adjusted score for candidate {index} is non-positive ({value}); tau is too large for the score scale"
    )]
    NonPositiveAdjusted { index: usize, value: f64 },

    #[error("covariance factorization failed after ridge escalation up to {max_ridge:e}")]
    FactorizationFailure { max_ridge: f64 },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid bundle field `{field}`: {reason}")]
    InvalidBundle { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numeric pipeline (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonPositiveAdjusted { .. }
                | Error::FactorizationFailure { .. }
                | Error::NonFiniteValue(_)
        )
    }

    pub(crate) fn bundle(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidBundle {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            field,
            reason: reason.into(),
        }
    }
}
