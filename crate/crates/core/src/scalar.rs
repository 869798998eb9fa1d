//! Numeric abstractions shared by the models.
//!
//! EM fitting and simulation need logarithms and exponentials, so they are
//! generic over [`Scalar`] (implemented for `f32` and `f64`). Counting metrics
//! such as Fleiss' kappa and the binary evaluation report only need field
//! arithmetic and are generic over [`Field`], which also admits exact
//! rationals like `num_rational::Ratio<i64>`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, NumAssign};

/// Floating point scalar used by the probabilistic models: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only if the type cannot hold it.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Exact or approximate field used by counting metrics.
pub trait Field: Num + Copy + PartialOrd + FromPrimitive + Debug {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in field type")
    }
}

impl<T> Field for T where T: Num + Copy + PartialOrd + FromPrimitive + Debug {}

/// `log(sum(exp(xs)))` without overflow. Returns `-inf` for an empty slice or
/// when every term is `-inf`.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    if max == F::infinity() {
        return max;
    }
    let sum: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place into probabilities and returns the log
/// normalizer.
pub fn normalize_log_weights<F: Scalar>(weights: &mut [F]) -> F {
    let lse = log_sum_exp(weights);
    for w in weights.iter_mut() {
        *w = (*w - lse).exp();
    }
    lse
}
