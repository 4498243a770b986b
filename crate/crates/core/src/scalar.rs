//! Scalar abstraction shared by every solver in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point type the solvers are generic over (`f32` or `f64`).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + 'static {
    /// Literal conversion; every `f64` constant used by the solvers is representable.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn nan() -> Self {
        Self::lit(f64::NAN)
    }

    /// Machine epsilon as an `f64`.
    fn epsilon_f64() -> f64;
}

impl Scalar for f32 {
    fn epsilon_f64() -> f64 {
        f32::EPSILON as f64
    }
}

impl Scalar for f64 {
    fn epsilon_f64() -> f64 {
        f64::EPSILON
    }
}

/// Tolerance that is at least `floor` and never below a few ulps of the scalar type.
pub(crate) fn tol_floor<T: Scalar>(requested: f64) -> T {
    T::lit(requested.max(64.0 * T::epsilon_f64()))
}
