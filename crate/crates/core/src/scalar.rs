//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All solvers and network math are generic over [`Real`], so the same code
//! runs in `f64` (the default used by the CLI and the bundled test cases)
//! or `f32`. Concrete aliases live at the crate root.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{}

/// Converts an `f64` literal into the working scalar type.
///
/// Panics only if the target type cannot represent any `f64`, which cannot
/// happen for the supported types.
#[inline]
pub fn cast<T: Real>(value: f64) -> T {
    T::from_f64(value).expect("f64 literal must convert to scalar type")
}
