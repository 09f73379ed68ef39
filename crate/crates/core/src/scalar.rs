//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + FftNum + Debug + Display + LowerExp + Default {
    /// Tolerance used when validating orthonormality of a basis.
    fn orthonormality_tolerance() -> Self;

    /// Lossy conversion to `f64` for reporting.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn orthonormality_tolerance() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn orthonormality_tolerance() -> Self {
        1e-10
    }
}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    <T as FromPrimitive>::from_f64(v).expect("f64 literal representable in scalar type")
}

/// Converts a count into the working scalar type.
#[inline]
pub fn count<T: Real>(v: usize) -> T {
    <T as FromPrimitive>::from_usize(v).expect("count representable in scalar type")
}
