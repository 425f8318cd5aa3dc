//! Float intrinsics routed through `libm` so results do not depend on
//! whether `std` is linked.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Softplus threshold above which `log(1 + e^x)` is returned as `x`.
pub const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

/// `log(1 + e^x)`, linear above 30 and floored at the smallest normal
/// double so the result is always strictly positive.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        ln_1p(exp(x)).max(f64::MIN_POSITIVE)
    }
}

/// Derivative of [`softplus`].
#[inline]
pub fn softplus_grad(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        1.0
    } else {
        sigmoid(x)
    }
}

/// Inverse of softplus for positive `y`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > SOFTPLUS_LINEAR_ABOVE {
        y
    } else {
        ln(libm::expm1(y))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
