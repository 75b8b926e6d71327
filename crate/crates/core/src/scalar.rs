//! Floating-point abstraction for the scoring and metric kernels.
//!
//! Trace tensors are always stored as `f32`; kernels widen them into a
//! working precision `F` chosen by the caller. `f64` is the default used by
//! the batch drivers and the CLI.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Working precision for scores: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Widen a stored tensor element.
    fn from_stored(x: f32) -> Self;

    /// Convert a configuration constant (weights, thresholds).
    fn from_config(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_stored(x: f32) -> Self {
        x
    }

    #[inline]
    fn from_config(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_stored(x: f32) -> Self {
        f64::from(x)
    }

    #[inline]
    fn from_config(x: f64) -> Self {
        x
    }
}

/// Widen a stored row into the working precision.
pub(crate) fn widen<F: Scalar>(row: &[f32]) -> Vec<F> {
    row.iter().map(|&x| F::from_stored(x)).collect()
}
