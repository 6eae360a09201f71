//! Standard normal distribution functions used by the probit likelihood.
//!
//! `Φ` is evaluated through the complementary error function so both tails
//! keep full relative precision. Beyond `|z| > TAIL_CUTOFF` the lower tail
//! switches to the asymptotic (Mills ratio) series, which keeps `log Φ` and
//! the inverse Mills ratio finite for any finite argument.

use crate::error::{Error, Result};

/// Latent magnitude above which the asymptotic tail series is used.
pub const TAIL_CUTOFF: f64 = 30.0;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub fn log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Φ(z) without input validation.
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Φ(z) for finite `z`.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite(z));
    }
    Ok(cdf(z))
}

// 1 - 1/z² + 3/z⁴ - 15/z⁶ + 105/z⁸, so that Φ(z) ≈ φ(z)/(-z) · series for z ≪ 0.
#[inline]
fn mills_series(z: f64) -> f64 {
    let r = 1.0 / (z * z);
    1.0 - r * (1.0 - r * (3.0 - r * (15.0 - 105.0 * r)))
}

/// log Φ(z), finite for every finite `z`.
pub fn log_cdf(z: f64) -> f64 {
    if z > 0.0 {
        (-0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
    } else if z >= -TAIL_CUTOFF {
        cdf(z).ln()
    } else {
        log_pdf(z) - (-z).ln() + mills_series(z).ln()
    }
}

/// Inverse Mills ratio φ(z)/Φ(z).
pub fn inverse_mills(z: f64) -> f64 {
    if z >= -TAIL_CUTOFF {
        (log_pdf(z) - log_cdf(z)).exp()
    } else {
        -z / mills_series(z)
    }
}

/// Φ⁻¹(p) by safeguarded Newton iteration on Φ, falling back to bisection
/// whenever a Newton step leaves the current bracket.
pub fn inverse_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut x = 0.0_f64;
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let newton = x - f / d;
        let next = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) || hi - lo <= 1e-15 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
