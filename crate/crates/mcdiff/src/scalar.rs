//! Floating-point abstraction the numeric core is generic over.

use std::fmt::{Debug, Display};

use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type for grids, schedules and network weights (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Narrowing bridge for values produced in `f64` (RNG output, literals).
    fn from_f64_lossy(v: f64) -> Self;

    /// Widening bridge for reporting and text output.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Shorthand for `T::from_usize(n).unwrap()` on types where it cannot fail.
#[inline]
pub(crate) fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_f64_lossy(n as f64)
}
