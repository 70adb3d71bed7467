//! Scalar abstraction for the tabular math.
//!
//! Every tabular routine is generic over [`Scalar`], so the same operators
//! run in `f32` for cheap sweeps and in `f64` for oracle-grade checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used throughout the tabular track.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Tolerance used when validating that rows lie on the simplex.
    const SIMPLEX_TOL: f64;

    /// Lossy conversion from `f64`; every finite `f64` maps to a value.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn half() -> Self {
        Self::of(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::of(2.0)
    }
}

impl Scalar for f32 {
    const SIMPLEX_TOL: f64 = 1e-5;
}

impl Scalar for f64 {
    const SIMPLEX_TOL: f64 = 1e-12;
}

/// `log Σ_i w_i exp(x_i)` with max-subtraction.
///
/// Entries with zero weight are skipped, so `-inf` values outside the
/// support never poison the result. Returns `-inf` when every weight is zero.
pub fn weighted_log_sum_exp<F: Scalar>(weights: &[F], xs: &[F]) -> F {
    debug_assert_eq!(weights.len(), xs.len());
    let mut max = F::neg_infinity();
    for (&w, &x) in weights.iter().zip(xs) {
        if w > F::zero() && x > max {
            max = x;
        }
    }
    if max == F::neg_infinity() || !max.is_finite() {
        return max;
    }
    let mut acc = F::zero();
    for (&w, &x) in weights.iter().zip(xs) {
        if w > F::zero() {
            acc += w * (x - max).exp();
        }
    }
    max + acc.ln()
}

/// Normalizes `exp(logits)` in place into a probability vector.
pub fn softmax_in_place<F: Scalar>(logits: &mut [F]) {
    let max = logits.iter().copied().fold(F::neg_infinity(), |m, x| if x > m { x } else { m });
    let mut total = F::zero();
    for x in logits.iter_mut() {
        *x = if *x == F::neg_infinity() { F::zero() } else { (*x - max).exp() };
        total += *x;
    }
    for x in logits.iter_mut() {
        *x /= total;
    }
}

pub fn max_abs_diff<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(F::zero(), |m, d| if d > m { d } else { m })
}
