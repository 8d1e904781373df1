use thiserror::Error;

/// Errors raised by the estimators, the test and the simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("row {row}: {reason}")]
    InvariantViolation { row: usize, reason: String },

    #[error("risk set is empty at t = {time}")]
    RiskSetEmpty { time: f64 },

    #[error("row {row}: censoring survival estimate is zero at the failure time")]
    ZeroWeightDenominator { row: usize },

    #[error("row {row}: weight is not finite ({weight})")]
    NonfiniteWeight { row: usize, weight: f64 },

    #[error("failure rows must carry cause labels (row {row} has none)")]
    MissingCauseLabels { row: usize },

    #[error("kernel argument {position} has no cause label")]
    MissingCause { position: usize },

    #[error("sample of size {n} is too small, need at least {required}")]
    SampleTooSmall { n: usize, required: usize },

    #[error("weight vector has length {got}, sample has {expected} rows")]
    WeightLengthMismatch { expected: usize, got: usize },

    #[error("variance estimate is degenerate ({value})")]
    DegenerateVariance { value: f64 },

    #[error("no root bracketed while calibrating {what}")]
    NoRoot { what: &'static str },

    #[error("conditional cause probability {value} is outside [0, 1]")]
    InvalidProbability { value: f64 },

    #[error("generation stalled after {attempts} attempts for a single observed unit")]
    GenerationStalled { attempts: u64 },

    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptySample
                | Error::InvariantViolation { .. }
                | Error::MissingCauseLabels { .. }
                | Error::MissingCause { .. }
                | Error::InvalidConfig { .. }
                | Error::Parse { .. }
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
