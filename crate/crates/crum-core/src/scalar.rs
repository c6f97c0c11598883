//! Scalar abstraction for the numeric core.
//!
//! Every model, loss, and oracle in this crate is generic over [`Scalar`] so
//! the same code runs at `f32` (pipeline speed) and `f64` (verification
//! precision). `ndarray`'s matrix multiply specializes to its fast gemm for
//! both concrete types, so the generic code pays no dispatch penalty.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the numeric core.
///
/// Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal or intermediate into `S`.
///
/// Panics on values that do not convert (never the case for finite literals).
pub fn lit<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite f64 literal converts to scalar")
}

/// Converts a scalar to `f64` for reporting and metric accumulation.
pub fn upcast<S: Scalar>(x: S) -> f64 {
    x.to_f64().expect("scalar converts to f64")
}
