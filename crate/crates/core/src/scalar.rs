//! Floating point abstraction shared by the kernels, the convolution paths and the
//! trainable network. Inference and training run in `f32`; `f64` exists for
//! finite-difference gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by every numeric routine in the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; always succeeds for the float types.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Element-wise relative error with denominator `max(|oracle|, 1)`.
pub fn relative_error<T: Scalar>(value: T, oracle: T) -> f64 {
    let (v, o) = (value.as_f64(), oracle.as_f64());
    (v - o).abs() / o.abs().max(1.0)
}

/// Largest [`relative_error`] over two equally sized slices.
pub fn max_relative_error<T: Scalar>(values: &[T], oracle: &[T]) -> f64 {
    assert_eq!(values.len(), oracle.len(), "length mismatch");
    values.iter().zip(oracle).map(|(&v, &o)| relative_error(v, o)).fold(0.0, f64::max)
}
