//! Scalar abstraction for the combination math.
//!
//! The weighting and normalization formulas are independent of the float
//! width, so they are written against [`Real`] and instantiated at `f64`
//! throughout the pipeline (see the aliases at the crate root).

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::iter::Sum;

/// Floating-point scalar usable by the combination math.
pub trait Real: Float + FromPrimitive + Sum + Debug + 'static {
    /// Lossy conversion from `f64` for constants.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Sum + Debug + 'static {}
