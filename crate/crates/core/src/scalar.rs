//! Floating-point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the solvers are written against (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; every literal used by the crate is representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Number of significant decimal digits needed for a lossless text round trip.
    fn round_trip_digits() -> usize;
}

impl Scalar for f32 {
    fn round_trip_digits() -> usize {
        9
    }
}

impl Scalar for f64 {
    fn round_trip_digits() -> usize {
        17
    }
}

/// Shorthand for [`Scalar::lit`].
#[inline]
pub fn lit<S: Scalar>(x: f64) -> S {
    S::lit(x)
}

pub(crate) fn norm2<S: Scalar>(xs: &[S]) -> S {
    xs.iter().map(|&x| x * x).sum::<S>().sqrt()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr<S: Scalar>(xs: &[S]) -> (S, S) {
    if xs.is_empty() {
        return (S::nan(), S::nan());
    }
    let n = S::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<S>() / n;
    if xs.len() < 2 {
        return (mean, S::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / (n - S::one());
    (mean, (var / n).sqrt())
}
