//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Numerical
//! routines fail loudly (singular systems, eigensolver non-convergence,
//! enumeration blow-ups) instead of silently producing garbage.

use thiserror::Error;

/// Errors produced by model construction, detectors, solvers and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A Cholesky pivot fell below the positive-definiteness threshold.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// An exhaustive search would enumerate more candidates than the cap allows.
    #[error("enumeration over {bits} sign bits exceeds the cap of {cap} bits")]
    EnumerationCap { bits: u32, cap: u32 },

    /// The cyclic Jacobi eigensolver did not reduce the off-diagonal mass in time.
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal mass {off:.3e})")]
    EigenNonConvergence { sweeps: usize, off: f64 },

    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Training produced a non-finite loss; the returned context says when.
    #[error("training diverged at iteration {iteration}: {reason}")]
    TrainingDiverged { iteration: u64, reason: String },

    /// A checkpoint file could not be parsed or fails validation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
