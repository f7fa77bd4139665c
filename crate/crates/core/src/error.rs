use thiserror::Error;

/// Errors raised by the surrogate library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient samples: {available} available, {required} required")]
    InsufficientSamples { available: usize, required: usize },

    #[error("degenerate interval [{lower}, {upper}]")]
    DegenerateInterval { lower: f64, upper: f64 },

    #[error(
        "moment matrix numerically singular at degree {failed_degree}; \
         maximum achievable degree is {max_degree}"
    )]
    SingularMoments {
        failed_degree: usize,
        max_degree: usize,
    },

    #[error("unsupported degree {degree} (maximum {max})")]
    UnsupportedDegree { degree: usize, max: usize },

    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("degenerate output: {0}")]
    DegenerateOutput(String),

    #[error(
        "analytic evaluation needs about {estimated_terms} terms (budget {budget}); \
         use the pick-freeze estimator instead"
    )]
    BudgetExceeded { estimated_terms: u128, budget: u128 },

    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
