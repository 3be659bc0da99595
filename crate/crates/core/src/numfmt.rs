//! Number renderings shared by the CSV and text formats.

/// Integral values as plain decimal integers, everything else as the
/// shortest string that parses back to the same `f64`.
pub fn lossless(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Rounds to six significant digits.
pub fn round_sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

/// Integers in decimal; other values rounded to six significant digits and
/// printed in their shortest form ("0.0013", not "1.30000e-3").
pub fn sig6(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        lossless(round_sig6(v))
    }
}
