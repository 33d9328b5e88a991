//! Floating-point abstraction for the linear-algebra core.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the state-space engine.
///
/// Implemented for `f32` and `f64`. Everything statistical downstream of the
/// filter (tests, optimizers, simulation) works in `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Debug + 'static
{
    /// Converts an `f64` literal, panicking only if the type cannot represent it.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }

    #[inline]
    fn nan() -> Self {
        Self::lit(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
