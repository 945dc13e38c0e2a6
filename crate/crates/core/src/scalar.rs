//! Scalar abstraction.
//!
//! All numeric code is generic over [`Real`] so the same solver runs in
//! `f32` and `f64`. Random draws are always produced as `f64` and then
//! narrowed, which keeps the underlying bit stream identical across
//! precisions.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar type of the solver.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Converts from `f64`, rounding to the nearest representable value.
    fn of(v: f64) -> Self;

    /// Converts a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Widens to `f64` for reporting.
    #[inline]
    fn lossy_f64(self) -> f64 {
        self.to_f64().expect("Real widens to f64")
    }

    /// Smallest value strictly greater than `self`.
    fn next_up_(self) -> Self;

    /// Largest value strictly smaller than `self`.
    fn next_down_(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    fn next_up_(self) -> Self {
        self.next_up()
    }
    fn next_down_(self) -> Self {
        self.next_down()
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    fn next_up_(self) -> Self {
        self.next_up()
    }
    fn next_down_(self) -> Self {
        self.next_down()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(0.25), 0.25);
        assert_eq!(f32::of(0.25), 0.25f32);
        assert_eq!(f64::of_usize(7), 7.0);
        assert_eq!(1.5f64.lossy_f64(), 1.5);
    }

    #[test]
    fn next_up_is_strict() {
        let t = 0.5f64;
        assert!(t.next_up_() > t);
        assert!(t.next_down_() < t);
        let t = 0.5f32;
        assert!(t.next_up_() > t);
    }
}
