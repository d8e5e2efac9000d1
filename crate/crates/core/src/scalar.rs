//! Scalar abstraction shared by every numeric module.
//!
//! Everything numeric in the crate is generic over [`Scalar`]; the crate root
//! re-exports `f64` aliases, which is what the experiments and the identity
//! checks use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable by the networks, targets and losses: `f32` or `f64`.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Bit pattern of the value widened to `f64`; used as a hash key.
    #[inline]
    fn key_bits(self) -> u64 {
        self.as_f64().to_bits()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
