//! Floating-point scalar abstraction.
//!
//! All numerical code in this crate is generic over [`Scalar`], which bundles
//! the `num-traits` capabilities the algorithms actually need. The crate root
//! exports `f64`-backed type aliases, and `f64` is what the simulation harness
//! and the acceptance tests run on; `f32` is available for callers who want to
//! trade precision for memory.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

/// Floating-point scalar used by matrices, detectors, solvers and networks.
///
/// The `from_f64`/`as_f64` helpers exist because literal constants (tolerances,
/// penalty weights, Adam betas) are written as `f64` in the source and need a
/// deterministic conversion into the working precision.
pub trait Scalar: Float + NumAssign + Sum + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` constant into the working precision.
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 constant converts to scalar")
    }

    /// Widens the value to `f64` (used for reporting and CSV output).
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
