use thiserror::Error;

/// Errors raised by the allocation, risk and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid beta parameter `{field}`: {value} (must be positive and finite)")]
    InvalidPrior { field: &'static str, value: f64 },

    #[error("invalid counts: {successes} successes out of {trials} trials")]
    InvalidCounts { trials: u64, successes: u64 },

    #[error("structural error: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("operation requires topology {expected}, got {found}")]
    Topology {
        expected: &'static str,
        found: &'static str,
    },

    #[error("sample budget too small: {0}")]
    BudgetTooSmall(String),

    #[error("enumeration budget exceeded: {paths} paths > max_paths {max_paths}")]
    EnumerationBudget { paths: u128, max_paths: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
