use thiserror::Error;

/// Errors raised by the form algebra, the spectral calculus and the flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("degree overflow: ({p},{q}) does not fit in complex dimension {n}")]
    Degree { n: usize, p: usize, q: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("bidegree mismatch: ({p1},{q1}) vs ({p2},{q2})")]
    Bidegree {
        p1: usize,
        q1: usize,
        p2: usize,
        q2: usize,
    },

    /// A matrix required to be positive definite is not. When raised from a
    /// field operation `point` is the offending grid index.
    #[error("not positive definite (point {point:?}, smallest eigenvalue {eigenvalue:e})")]
    NotPositive {
        point: Option<usize>,
        eigenvalue: f64,
    },

    #[error("form is not real: anti-Hermitian part {defect:e}")]
    NotReal { defect: f64 },

    #[error("derivative order {k} too large for resolution {resolution}")]
    Resolution { k: usize, resolution: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;
