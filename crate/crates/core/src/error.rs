use thiserror::Error;

/// Which probe of a finite-difference quotient produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeSide {
    Base,
    Plus,
    Minus,
}

impl std::fmt::Display for ProbeSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProbeSide::Base => "base point",
            ProbeSide::Plus => "forward probe",
            ProbeSide::Minus => "backward probe",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PfdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("boundary error: zero mass at index {index} makes {what} log-singular")]
    Boundary { index: usize, what: &'static str },

    #[error("functional is not finite at the {0}")]
    NonFiniteProbe(ProbeSide),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("estimator diverged after {steps} steps: objective regressed {regressions} times in a row")]
    Divergence { steps: usize, regressions: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PfdError>;
