use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is indefinite (min eigenvalue {min_eigenvalue:e})")]
    IndefiniteMatrix { min_eigenvalue: f64 },

    #[error("matrix is singular or not positive definite")]
    SingularMatrix,

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("batch contains no observations")]
    EmptyBatch,

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("invalid context set: {0}")]
    InvalidContexts(String),

    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("malformed instance: {0}")]
    MalformedInstance(String),

    #[error("non-finite value in {what}{}", scenario.map(|s| format!(" (scenario {s})")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        scenario: Option<usize>,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
