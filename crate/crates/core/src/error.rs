//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by configuration validation, combinatorial counting and
/// data ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("regular simplex requires 2 <= K <= h+1 (got K={k}, h={h})")]
    SimplexDoesNotExist { k: usize, h: usize },

    #[error("zero vector has no direction{}", fmt_index(.index))]
    ZeroVector { index: Option<usize> },

    #[error("class {class} has no points")]
    EmptyClass { class: usize },

    #[error("label configuration is not balanced: {0}")]
    UnbalancedLabels(String),

    #[error("integer overflow while computing {0}")]
    Overflow(String),

    #[error("enumeration of {batches} batches exceeds the budget of {budget}; use the SGD optimizer instead")]
    BudgetExceeded { batches: u128, budget: u128 },

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("{path}:{line}: {msg}")]
    CsvFormat { path: String, line: u64, msg: String },

    #[error("empirical value {empirical} lies below the bound {bound} by more than {tol}; this indicates a bug")]
    BoundViolation { empirical: f64, bound: f64, tol: f64 },

    #[error("normalization mismatch: {0}")]
    NormalizationMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_index(index: &Option<usize>) -> String {
    match index {
        Some(i) => format!(" (row {i})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
