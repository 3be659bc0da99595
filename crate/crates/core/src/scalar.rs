//! Floating-point scalar abstraction used by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type for tensors, models and metrics.
///
/// Implemented for `f32` and `f64`. Gradient checks and exact-oracle tests run
/// in `f64`; `f32` is available for faster training runs.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short tag written into checkpoints ("f32" / "f64").
    const TAG: &'static str;

    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::c(0.5)
    }
}

impl Scalar for f32 {
    const TAG: &'static str = "f32";
}

impl Scalar for f64 {
    const TAG: &'static str = "f64";
}
