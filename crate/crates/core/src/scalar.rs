//! Scalar abstraction for the network engine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type usable by [`Matrix`](crate::nn::Matrix) and
/// [`Mlp`](crate::nn::Mlp): `f32` or `f64`.
///
/// Wire and checkpoint formats always carry `f64`; [`Scalar::from_wire`]
/// and [`Scalar::to_wire`] convert at the boundary. Widening `f32` to `f64`
/// is exact, so checkpoints round-trip bit-identically for both types.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_wire(v: f64) -> Self;
    fn to_wire(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_wire(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_wire(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_wire(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_wire(self) -> f64 {
        self
    }
}

/// Shorthand for literal constants inside generic code.
#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_wire(v)
}
