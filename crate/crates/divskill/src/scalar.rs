//! Scalar abstraction for probability arithmetic.
//!
//! Coverage objectives and success rates are computed either in floats
//! (tolerance-based comparisons) or in exact rationals (0/1 matrices and
//! tie-sensitive acceptance rules). `ProbScalar` captures what both need.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};

/// Numeric type usable as a probability: closed under ring operations,
/// ordered, and constructible from small count ratios.
pub trait ProbScalar: Num + Clone + PartialOrd + std::fmt::Debug {
    /// The value `numer / denom`. Exact for rational scalars.
    fn from_count_ratio(numer: u64, denom: u64) -> Self;

    /// Lossy view for reporting and cross-type comparisons.
    fn approx_f64(&self) -> f64;

    /// Slack admitted when comparing two values of this type.
    /// Zero for exact scalars.
    fn comparison_slack() -> Self;
}

impl ProbScalar for f64 {
    fn from_count_ratio(numer: u64, denom: u64) -> Self {
        numer as f64 / denom as f64
    }

    fn approx_f64(&self) -> f64 {
        *self
    }

    fn comparison_slack() -> Self {
        1e-12
    }
}

impl ProbScalar for f32 {
    fn from_count_ratio(numer: u64, denom: u64) -> Self {
        numer as f32 / denom as f32
    }

    fn approx_f64(&self) -> f64 {
        f64::from(*self)
    }

    fn comparison_slack() -> Self {
        1e-5
    }
}

impl ProbScalar for BigRational {
    fn from_count_ratio(numer: u64, denom: u64) -> Self {
        BigRational::new(BigInt::from(numer), BigInt::from(denom))
    }

    fn approx_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn comparison_slack() -> Self {
        BigRational::from_integer(BigInt::from(0))
    }
}
