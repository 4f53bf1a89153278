//! Deterministic IEEE-754 binary32 kernels and boundary probes.
//!
//! Everything here computes in binary32 with round-to-nearest-even and no
//! extended-precision intermediates. `exp` and `log` are evaluated through the
//! binary64 library functions and rounded to binary32 before any further
//! arithmetic; the saturation boundaries hold either way because e.g. exp(89)
//! already exceeds the largest finite binary32.

use std::num::ParseFloatError;

/// Binary32 format constants, in the shape of `torch.finfo(torch.float32)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finfo {
    /// Decimal precision step: 10^-(decimal digits carried by the format).
    pub resolution: f32,
    /// Most negative finite value.
    pub min: f32,
    /// Largest finite value.
    pub max: f32,
    /// Machine epsilon at 1.0, i.e. 2^-23.
    pub eps: f32,
    /// Smallest positive normal, 2^-126.
    pub tiny: f32,
    /// Smallest positive denormal, 2^-149.
    pub smallest_subnormal: f32,
}

/// Binary32 constants derived from the bit format, never from printed
/// decimals, so tests against published values cross-check rather than
/// tautologize.
pub fn finfo() -> Finfo {
    let eps = f32::EPSILON; // 2^-23 from the 24-bit significand
    let tiny = f32::MIN_POSITIVE; // 2^-126, minimum normal exponent
    let smallest_subnormal = f32::from_bits(1); // one ulp above +0
    let digits = (-f64::from(eps).log10()).floor() as i32;
    Finfo {
        resolution: 10f64.powi(-digits) as f32,
        min: f32::MIN,
        max: f32::MAX,
        eps,
        tiny,
        smallest_subnormal,
    }
}

/// Round-to-nearest-even conversion of a decimal literal into binary32.
///
/// Magnitudes below half the smallest subnormal flush to zero, so
/// `"7.1e-46"` parses to 1.4013e-45 while `"7.0e-46"` parses to 0.0.
pub fn parse_decimal_to_f32(text: &str) -> Result<f32, ParseFloatError> {
    text.trim().parse::<f32>()
}

/// Logistic sigmoid in binary32: 1 / (1 + exp(-z)).
///
/// exp(-z) is rounded to binary32 before the add and divide, so exp(89)
/// overflows to infinity and `sigmoid32(-89.0)` is exactly 0. Saturation is
/// the documented behavior, not an error.
pub fn sigmoid32(z: f32) -> f32 {
    let e = f64::from(-z).exp() as f32;
    1.0f32 / (1.0f32 + e)
}

/// log(y + eps) with the shift added in binary32.
///
/// Returns negative infinity when `y + eps` rounds to zero; the propagation is
/// deliberate, NaN detection happens downstream.
pub fn log32_shifted(y: f32, eps: f32) -> f32 {
    let shifted = y + eps;
    f64::from(shifted).ln() as f32
}
