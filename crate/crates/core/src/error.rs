//! Crate-wide error type.

use thiserror::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by model construction, scoring, and verification routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A parameter violated one of the documented interval constraints.
    #[error("constraint violation on `{parameter}`: {detail}")]
    ConstraintViolation { parameter: String, detail: String },

    /// An input left the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is undefined for these inputs (no extrapolation is done).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The chain is not irreducible, so the requested quantity is undefined.
    #[error("matrix `{0}` is not irreducible")]
    NotIrreducible(String),

    /// No power of the matrix within the cap is strictly positive.
    #[error("matrix `{label}` is not primitive within cap {cap}")]
    NotPrimitive { label: String, cap: usize },

    /// Sequence lengths that must agree do not.
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A positional index fell outside the valid range.
    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// The triplet pattern has zero probability under the model.
    #[error("pattern infeasible: {0}")]
    PatternInfeasible(String),

    /// A side condition of an inequality or procedure is not met.
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    /// The random transformation has no triplet to act on.
    #[error("no eligible triplet: transformation requires u < v")]
    NoEligibleTriplet,

    /// The weight solver produced values outside [0, 1].
    #[error("infeasible weights: {0}")]
    Infeasible(String),

    /// The two patterns have different conditional middle probabilities.
    #[error("unequal q: q1 = {q1}, q2 = {q2}")]
    UnequalQ { q1: f64, q2: f64 },

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration cap exceeded: {states} sequences > cap {cap}")]
    CapExceeded { states: u128, cap: u128 },

    /// The conditioning event has zero probability.
    #[error("empty condition: {0}")]
    EmptyCondition(String),

    /// Not enough data to compute the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A numerical post-condition failed (ill-conditioned input).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed serialized input.
    #[error("parse error: {0}")]
    Parse(String),
}
