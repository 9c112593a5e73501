//! Error types shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by configuration validation and runtime operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter combination that can never be valid (rejected up front).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Structurally valid inputs that violate an operation's contract.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix/vector shapes that do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Least-squares support grew past the chip count; the per-column
    /// systems are underdetermined and the trial cannot be solved.
    #[error("over-saturated support: {support} users > {chips} chips")]
    OverSaturated { support: usize, chips: usize },

    /// The exhaustive oracle refused a search space that would explode.
    #[error("oracle guard: C({n},{k}) = {subsets} subsets exceeds limit {limit}")]
    OracleGuard {
        n: usize,
        k: usize,
        subsets: u128,
        limit: u128,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
