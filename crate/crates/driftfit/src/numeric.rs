//! Small numerical helpers shared across the crate.

use std::f64::consts::TAU;

/// cos(2πu), exact at quarter periods and bitwise mirror-symmetric.
///
/// The phase is folded into [0, 1/8] of a period using only exact
/// reflections (`1 - frac` and `0.5 - frac` are exact for the ranges they
/// are applied to) before calling the libm routine. Two consequences the
/// rest of the crate relies on:
///
/// * `u = k/4` for integer `k` yields exactly ±1.0 or 0.0 instead of
///   values like 6.1e-17, which keeps boundary observations in the
///   intended quantizer bin;
/// * arguments whose fractional parts are exact mirror images (`f` and
///   `1 - f`, e.g. grid fractions `i/N` and `(N-i)/N` with N a power of
///   two) produce bit-identical results, so spatially mirrored states get
///   exactly equal observation values.
pub fn cos2pi(u: f64) -> f64 {
    let mut frac = u - u.floor();
    if frac > 0.5 {
        frac = 1.0 - frac; // cos(2π(1-v)) = cos(2πv)
    }
    let mut sign = 1.0;
    if frac > 0.25 {
        frac = 0.5 - frac; // cos(2π(1/2-v)) = -cos(2πv)
        sign = -1.0;
    }
    if frac == 0.25 {
        return 0.0;
    }
    if frac > 0.125 {
        sign * (TAU * (0.25 - frac)).sin() // cos(2πv) = sin(2π(1/4-v))
    } else {
        sign * (TAU * frac).cos()
    }
}

/// sin(2πu), exact at quarter periods and bitwise mirror-antisymmetric.
/// See [`cos2pi`] for the reduction contract.
pub fn sin2pi(u: f64) -> f64 {
    let mut frac = u - u.floor();
    let mut sign = 1.0;
    if frac > 0.5 {
        frac = 1.0 - frac; // sin(2π(1-v)) = -sin(2πv)
        sign = -1.0;
    }
    if frac > 0.25 {
        frac = 0.5 - frac; // sin(2π(1/2-v)) = sin(2πv)
    }
    if frac == 0.25 {
        return sign; // sin at the quarter period is exactly ±1
    }
    if frac > 0.125 {
        sign * (TAU * (0.25 - frac)).cos() // sin(2πv) = cos(2π(1/4-v))
    } else {
        sign * (TAU * frac).sin()
    }
}

/// Standard normal CDF, accurate in both tails (limited by the erfc
/// implementation, roughly 1e-11 absolute).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}
