//! Scalar abstraction for the tensor kernel.
//!
//! All numeric code in this crate is generic over [`Scalar`], a thin bound on
//! `num_traits::Float`. Training and evaluation run at `f64` (the default
//! aliases at the crate root); `f32` is supported for callers that trade
//! precision for size.

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Floating-point element type of a tensor.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`, used for literals and config values.
    fn from_f64(x: f64) -> Self {
        num_traits::cast(x).expect("f64 value representable in scalar type")
    }

    /// Widening conversion to `f64`, used for reporting and serialization.
    fn as_f64(self) -> f64 {
        num_traits::cast(self).expect("scalar value representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
