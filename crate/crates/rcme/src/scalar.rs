//! Scalar abstraction: every module in this crate is generic over the
//! floating-point type.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Floating-point scalar the estimators are generic over: `f32` or `f64`.
pub trait Scalar: RealField + FromPrimitive + Copy {
    /// `true` for ordinary (non-NaN, non-infinite) values.
    fn finite(self) -> bool;

    /// Negative infinity, the score of a degenerate (zero-determinant)
    /// residual covariance.
    fn neg_infinity() -> Self;

    /// Quiet NaN, the value of statistics that are undefined for an input
    /// (e.g. the Z statistic of a zero-variance score vector).
    fn nan() -> Self;
}

impl Scalar for f32 {
    fn finite(self) -> bool {
        f32::is_finite(self)
    }
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
    fn nan() -> Self {
        f32::NAN
    }
}

impl Scalar for f64 {
    fn finite(self) -> bool {
        f64::is_finite(self)
    }
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
    fn nan() -> Self {
        f64::NAN
    }
}

/// Pulls an `f64` literal into the generic scalar type.
#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}
