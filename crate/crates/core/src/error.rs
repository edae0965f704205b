use nalgebra::DVector;
use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A privacy budget argument was rejected (nonpositive, non-finite, or malformed).
    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),

    /// Spending the requested amount would exceed the ledger's total budget.
    #[error("privacy budget exceeded: composed spend {composed} > total {total}")]
    BudgetExceeded { composed: f64, total: f64 },

    /// A numeric input failed validation (non-finite entries, dimension mismatch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A parameter vector left the domain of the loss (for example scale <= 0).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A user-supplied weight function violated its declared bound.
    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    /// An iterate exceeded the divergence threshold. Carries the trajectory prefix
    /// so callers can inspect how the run blew up.
    #[error("optimizer diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trajectory: Vec<DVector<f64>>,
    },

    /// A matrix operation that requires positive definiteness failed.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A cell of an input file could not be parsed. Row numbers are 1-based data rows.
    #[error("data parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// The input file's shape or header does not match what was asked for.
    #[error("data schema error: {0}")]
    Schema(String),

    /// A design column cannot be standardized (zero MAD) or is otherwise unusable.
    #[error("degenerate column: {0}")]
    DegenerateColumn(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
