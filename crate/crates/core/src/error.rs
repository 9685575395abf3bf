use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("condition {condition} violated at s = {time} (node {node}, regime {}), margin {margin:e}", regime + 1)]
    ConditionViolation {
        condition: &'static str,
        node: usize,
        time: f64,
        regime: usize,
        margin: f64,
    },

    #[error("non-finite value at s = {time} (regime {})", regime + 1)]
    NonFiniteValue { time: f64, regime: usize },

    #[error("singular {what} at s = {time} (regime {})", regime + 1)]
    Singular {
        what: &'static str,
        time: f64,
        regime: usize,
    },

    #[error("disturbance policy not simulatable: {0}")]
    UnsupportedDisturbance(String),

    #[error("no solvability bracket: gamma = {hi} is not solvable")]
    NoBracket { lo: f64, hi: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that reflect mathematical infeasibility rather than bad input.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::ConditionViolation { .. }
                | Error::NoBracket { .. }
                | Error::NonFiniteValue { .. }
                | Error::Singular { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
