use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type accepted by every kernel.
///
/// Storage and inference use `f32`; `f64` exists so that gradient checks can
/// run the exact same code path in double precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_storage(v: f32) -> Self;
    fn to_storage(self) -> f32;

    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_storage(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_storage(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_storage(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_storage(self) -> f32 {
        self as f32
    }
}
