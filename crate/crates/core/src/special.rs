//! Error function and standard-normal helpers.
//!
//! `erf`/`erfc` come from `libm` (musl port, about 1 ulp); the inverses come
//! from `statrs`. The normal CDF is routed through `erfc` so the lower tail
//! keeps full relative precision.

use std::f64::consts::SQRT_2;

pub use libm::{erf, erfc};
pub use statrs::function::erf::{erf_inv, erfc_inv};

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile. Returns `±inf` at the endpoints.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `(1 + erf(x)) / 2` evaluated without cancellation for negative `x`.
pub fn half_erfc_neg(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x)
    }
}
