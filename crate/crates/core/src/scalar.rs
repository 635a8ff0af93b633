//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the dynamics, estimator and statistics code.
///
/// Implemented for `f32` and `f64`. Linear algebra goes through nalgebra's
/// `RealField`; conversions to and from primitive numbers go through num-traits.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Converts a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used when validating that mixture weights sum to one.
    fn weight_tolerance() -> Self {
        let scaled = Self::default_epsilon() * Self::lit(100.0);
        scaled.max(Self::lit(1e-12))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
