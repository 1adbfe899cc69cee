use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point element type of the tensor engine: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// Lower clamp applied before every logarithm.
    fn log_floor() -> Self {
        Self::from_f64(1e-12).unwrap()
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
