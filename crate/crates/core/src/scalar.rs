//! Scalar abstraction shared by the numeric kernels.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point scalar: `f32` or `f64`.
///
/// The saliency, region and statistics kernels are written against this
/// trait. The pipeline itself runs in `f64`.
pub trait Scalar: Float + FromPrimitive + NumCast + Debug + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    /// Conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
