//! Scalar math helpers.
//!
//! All transcendentals are routed through `libm` rather than the platform
//! intrinsics.  That keeps the crate `no_std` and, just as important, makes
//! every computation bit-for-bit reproducible across OSes and libc versions.

/// Natural exponential.
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Natural logarithm.
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Logistic sigmoid, computed in a way that never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Sentinel for log(0) in log-domain dynamic programming.  A large negative
/// finite value instead of -inf so that sums never produce NaN.
pub const LOG_ZERO: f64 = -1.0e30;

/// log(exp(a) + exp(b)) without overflow; respects the LOG_ZERO sentinel.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a <= LOG_ZERO {
        return b;
    }
    if b <= LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + libm::log1p(exp(lo - hi))
}

/// log sum of a slice of log-domain values.
pub fn log_sum(xs: &[f64]) -> f64 {
    let mut acc = LOG_ZERO;
    for &x in xs {
        acc = log_add(acc, x);
    }
    acc
}
