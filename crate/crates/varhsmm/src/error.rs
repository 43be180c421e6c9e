//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model validation, inference, estimation, and selection.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A dimension of one input does not match another.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// Parameters failed validation; the message lists every violation.
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    /// An invalid structural specification (M, d, p, D) or configuration value.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// State index outside 0..M.
    #[error("state index {state} out of range for a model with {n_states} states")]
    StateOutOfRange { state: usize, n_states: usize },

    /// A time index or window does not fit inside the series.
    #[error("time index out of range: {0}")]
    TimeOutOfRange(String),

    /// Series shorter than an operation requires.
    #[error("series too short: need at least {needed} observations, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    /// A covariance matrix that must be positive definite is not.
    #[error("covariance for state {state} is not positive definite")]
    NotPositiveDefinite { state: usize },

    /// The EM objective became non-finite.
    #[error("non-finite log-likelihood at EM iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    /// Degenerate input that admits no sensible answer (all-zero weights, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A non-finite value where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A price matrix entry that is not strictly positive (log returns need > 0).
    #[error("non-positive price at row {row}, column {col}")]
    NonPositivePrice { row: usize, col: usize },

    /// Malformed serialized model document.
    #[error("malformed model document: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
