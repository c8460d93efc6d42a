//! Scalar abstraction for the numeric kernels.
//!
//! Everything math-heavy in this crate is generic over [`Real`], so the same
//! kernels run in `f32` or `f64`. The training harness and the verification
//! suites pin `f64`; the tolerances quoted there assume 64-bit arithmetic.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ScalarOperand + Sum + Debug + Display + Default + 'static
{
    /// Conversion to `f64` for logging and reports.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
