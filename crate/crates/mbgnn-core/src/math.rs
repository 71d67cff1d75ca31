//! Scalar float helpers routed through `libm`.
//!
//! Core is `no_std`-compatible, so the `f64` inherent methods from `std` are
//! unavailable; more importantly, `libm` evaluates transcendentals in software
//! with identical results on every platform, which keeps the whole pipeline
//! bit-deterministic.

pub const PI: f64 = core::f64::consts::PI;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// ln(1 + e^x) computed without overflow for large |x|.
#[inline]
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Logistic sigmoid, stable for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.5;
            let naive = 1.0 / (1.0 + exp(-x));
            assert!((sigmoid(x) - naive).abs() < 1e-15, "x={x}");
        }
    }

    #[test]
    fn sigmoid_extremes_do_not_overflow() {
        assert!(sigmoid(800.0) == 1.0);
        assert!(sigmoid(-800.0) > 0.0 || sigmoid(-800.0) == 0.0);
        assert!(ln_1p_exp(800.0).is_finite());
        assert!(ln_1p_exp(-800.0) >= 0.0);
    }
}
