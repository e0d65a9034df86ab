use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Real scalar used throughout the numerical modules: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion for literals.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `sqrt(machine epsilon)` scaled, used as a rank-detection floor.
pub(crate) fn rank_tolerance<T: Scalar>(n: usize) -> T {
    T::epsilon().sqrt() * T::of(n.max(1) as f64)
}
