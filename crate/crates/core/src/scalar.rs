//! Floating-point scalar abstraction: f32 for speed, f64 for numerical checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Scalar type the numeric core is generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from f64 (used for config constants and literals).
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
