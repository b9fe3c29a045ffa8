//! Simulation and detection library for a two-hop relay link with a direct
//! path: a multi-antenna source transmits to a destination while a relay
//! decodes the same transmission and forwards its own estimate, so the
//! destination combines two observations of one word — one of which may
//! already be wrong.
//!
//! The crate provides, in increasing order of structure:
//!
//! * [`linalg`] — dense row-major matrices, Cholesky solves, and a cyclic
//!   Jacobi eigensolver; everything downstream builds on these.
//! * [`model`] — system dimensions, antipodal signals, the complex-to-real
//!   block embedding, channel/noise sampling, SNR bookkeeping.
//! * [`exhaustive`] — enumeration detectors for the joint relay-aware metric
//!   under three relay-error penalty models, plus the matched variant that
//!   assumes the relay is always right.
//! * [`linear`] — the zero-gradient family (solve the relaxed quadratic,
//!   take signs) and zero-forcing front ends.
//! * [`sdr`] — semidefinite relaxation of the same metric, solved by an
//!   in-crate ADMM with a PSD projection step.
//! * [`detnet`] — deep-unfolded iterative detectors trained by hand-rolled
//!   backpropagation and Adam, with checkpointing.
//! * [`harness`] — Monte Carlo bit-error-rate sweeps combining any relay
//!   detector with any destination detector, with deterministic seeding,
//!   operation counters, and CSV output.
//! * [`oracle`] — slow, independent reference implementations used by the
//!   test suite and the `oracle` CLI subcommand; kept deliberately naive.
//!
//! Numeric code is generic over the floating scalar through [`Scalar`]
//! (implemented for `f32` and `f64`); the aliases below pin the common
//! double-precision instantiations.

pub mod error;
pub mod exhaustive;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod sdr;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision matrix.
pub type Mat64 = linalg::Mat<f64>;
/// Double-precision channel.
pub type RealChannel64 = model::RealChannel<f64>;
/// Double-precision stacked detection problem.
pub type StackedProblem64 = exhaustive::StackedProblem<f64>;
