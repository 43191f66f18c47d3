//! Log-domain scalar arithmetic.
//!
//! A quantity `x ∈ (0, 1]` is stored as `u = -log x`. Parameter values of
//! sparkling connections decay doubly exponentially with the turn count, so
//! `x` itself underflows after a dozen turns while `u` stays comfortably
//! inside the `f64` range up to `u ≈ 1e308`. Model correspondence maps
//! `x ↦ e^{-c} x^λ` become the affine maps `u ↦ λu + c`.
//!
//! The generic [`Real`] trait lets the solver run either on `f64` or, with
//! the `extended` feature, on a 128-bit significand.

#[cfg(feature = "extended")]
mod extended;

#[cfg(feature = "extended")]
pub use extended::Ext;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar used for `u = -log x` inside the solver.
pub trait Real: Clone + PartialOrd + fmt::Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn mul_f64(&self, k: f64) -> Self;
    fn add_f64(&self, k: f64) -> Self;
    fn neg(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn ln_1p(&self) -> Self;
    fn half(&self) -> Self;
    fn is_finite(&self) -> bool;
    fn infinity() -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn mul_f64(&self, k: f64) -> Self {
        self * k
    }
    fn add_f64(&self, k: f64) -> Self {
        self + k
    }
    fn neg(&self) -> Self {
        -self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn ln_1p(&self) -> Self {
        f64::ln_1p(*self)
    }
    fn half(&self) -> Self {
        0.5 * self
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn infinity() -> Self {
        f64::INFINITY
    }
}

/// `-log(e^{-a} + e^{-b})` evaluated as `min(a, b) - log1p(exp(-|a - b|))`.
///
/// No clamping: the result may be negative when the sum exceeds one.
pub fn log_add_u<R: Real>(a: &R, b: &R) -> R {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !hi.is_finite() {
        return lo.clone();
    }
    let gap = hi.sub(lo);
    lo.sub(&gap.neg().exp().ln_1p())
}

/// Midpoint of two log-domain values.
pub fn midpoint<R: Real>(a: &R, b: &R) -> R {
    a.add(b).half()
}

/// A positive quantity `x ∈ [0, 1]` stored as `u = -log x`.
///
/// Ordering follows `u`, which is the reverse of the ordering on `x`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LogScale(f64);

impl LogScale {
    /// `x = 1`.
    pub const ONE: LogScale = LogScale(0.0);
    /// `x = 0`.
    pub const ZERO: LogScale = LogScale(f64::INFINITY);

    pub fn from_real(x: f64) -> Result<Self> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(Error::domain(format!("x = {x} is outside (0, 1]")));
        }
        Ok(LogScale(-x.ln()))
    }

    /// Wraps an already computed `u = -log x`.
    pub fn from_u(u: f64) -> Result<Self> {
        if u.is_nan() || u < 0.0 {
            return Err(Error::domain(format!(
                "u = {u} is not a nonnegative extended real"
            )));
        }
        Ok(LogScale(u))
    }

    #[inline]
    pub fn u(self) -> f64 {
        self.0
    }

    pub fn to_real(self) -> f64 {
        (-self.0).exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// Log-domain sum `x_a + x_b`. Sums above one saturate at `x = 1`.
    pub fn log_add(self, other: LogScale) -> LogScale {
        LogScale(log_add_u(&self.0, &other.0).max(0.0))
    }

    /// The model map `x ↦ e^{-c} x^Λ`, i.e. `u ↦ Λu + c`.
    pub fn affine(self, lambda: f64, c: f64) -> Result<LogScale> {
        if !(lambda > 0.0) {
            return Err(Error::domain(format!("exponent {lambda} must be positive")));
        }
        let u = lambda * self.0 + c;
        if u.is_nan() || u < 0.0 {
            return Err(Error::domain(format!(
                "affine image u = {u} left (0, 1] (input u = {}, Λ = {lambda}, c = {c})",
                self.0
            )));
        }
        Ok(LogScale(u))
    }

    /// `log(-log x)`, the coordinate in which sparkling sequences are
    /// asymptotically arithmetic.
    pub fn loglog(self) -> Result<f64> {
        if self.0 == 0.0 || !self.0.is_finite() {
            return Err(Error::domain(format!("loglog undefined at u = {}", self.0)));
        }
        Ok(self.0.ln())
    }
}

impl Eq for LogScale {}

impl PartialOrd for LogScale {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LogScale {
    fn cmp(&self, other: &Self) -> Ordering {
        // u is never NaN by construction.
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Debug for LogScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogScale(u={})", self.0)
    }
}

impl fmt::Display for LogScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp(-{})", self.0)
    }
}

impl TryFrom<f64> for LogScale {
    type Error = Error;

    fn try_from(u: f64) -> Result<Self> {
        LogScale::from_u(u)
    }
}

impl From<LogScale> for f64 {
    fn from(v: LogScale) -> f64 {
        v.0
    }
}

/// Arithmetic precision used by the connection solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Extended,
}

impl Precision {
    pub fn is_available(self) -> bool {
        match self {
            Precision::Double => true,
            Precision::Extended => cfg!(feature = "extended"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Precision::Double),
            "extended" => Ok(Precision::Extended),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Double => "double",
            Precision::Extended => "extended",
        })
    }
}
