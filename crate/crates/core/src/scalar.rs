//! Floating-point scalar abstraction shared by every kernel.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A real scalar the kernels can be instantiated with.
///
/// Implemented for `f32`, `f64` and the double-double [`crate::dd::Dd`].
/// Training and the analytic gradients run at `f64`; `Dd` evaluates the
/// finite-difference side of the gradient checks; `f32` is available for
/// cheaper experiments.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Decimal significant digits needed for a lossless text roundtrip.
    const SIGNIFICANT_DIGITS: usize;

    /// Converts an `f64` literal. Panics only if the value is unrepresentable,
    /// which cannot happen for the implementors here.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const SIGNIFICANT_DIGITS: usize = 9;
}

impl Scalar for f64 {
    const SIGNIFICANT_DIGITS: usize = 17;
}
