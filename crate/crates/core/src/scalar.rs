//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! Everything is generic over [`Scalar`], which is implemented for `f32` and
//! `f64`. The tracker and the Monte Carlo oracle are normally run in `f64`;
//! `f32` is supported for memory-constrained callers but loses several digits
//! in the pseudo-measurement covariance.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type usable by the filters.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync {
    /// Converts an `f64` literal, rounding when `Self` is narrower.
    fn lit(value: f64) -> Self;

    /// Converts a count.
    fn from_count(value: usize) -> Self {
        Self::lit(value as f64)
    }

    /// Widens to `f64` (exact for both supported types).
    fn to_f64_lossless(self) -> f64;

    /// `true` unless the value is NaN or infinite.
    fn finite(self) -> bool {
        self.to_f64_lossless().is_finite()
    }
}

impl Scalar for f32 {
    #[inline]
    fn lit(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(value: f64) -> Self {
        value
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half<T: Scalar>() -> T {
        T::lit(1.0) / T::from_count(2)
    }

    #[test]
    fn literals_round_trip() {
        assert_eq!(half::<f64>(), 0.5);
        assert_eq!(half::<f32>(), 0.5f32);
        assert!(!f64::NAN.finite());
        assert!(1.0f32.finite());
    }
}
