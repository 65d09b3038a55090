//! Floating-point scalar abstraction for the numeric core.
//!
//! All tensor math is generic over [`Scalar`] so the engine can run at f32
//! or f64. The shipped pipeline, file formats, and acceptance tolerances are
//! pinned to f64 (see the type aliases at the crate root).

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: f32 or f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumCast
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an f64 constant into this scalar type.
    fn of(x: f64) -> Self;

    /// Widen to f64.
    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
