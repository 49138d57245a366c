//! Scalar abstraction shared by every numeric module.

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Widening conversion used for reporting and for integer bookkeeping.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        nalgebra::convert(n as f64)
    }

    #[inline]
    fn to_deg(self) -> Self {
        self * Self::lit(180.0) / Self::pi()
    }

    #[inline]
    fn to_rad(self) -> Self {
        self * Self::pi() / Self::lit(180.0)
    }

    /// Tolerance used for invariant checks: 1e-9 for `f64`, scaled to the
    /// machine epsilon for narrower types.
    #[inline]
    fn invariant_tol() -> Self {
        let scaled = Self::default_epsilon() * Self::lit(1.0e4);
        Self::lit(1.0e-9).max(scaled)
    }
}

impl Real for f64 {}
impl Real for f32 {}
