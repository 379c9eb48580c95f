use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the solvers are written against: `f32` or `f64`.
///
/// Arithmetic and elementary functions come from [`RealField`]; conversions
/// to and from literals go through num-traits.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` literal. Infallible for the float types this is implemented for.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn infinity() -> Self;

    fn is_finite_value(self) -> bool;
}

impl Real for f32 {
    fn infinity() -> Self {
        f32::INFINITY
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Real for f64 {
    fn infinity() -> Self {
        f64::INFINITY
    }

    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}
