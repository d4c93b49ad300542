//! Decimal formatting helpers shared by the CSV writers and the CLI.

/// Formats with `digits` significant digits in plain decimal notation.
///
/// Used for CSV cells. Integers larger than the requested precision print
/// exactly rather than rounded, which keeps counters like `k` readable.
pub fn format_sig(x: f64, digits: u32) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - exponent).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

/// Six significant digits, the precision every emitted CSV uses.
pub fn sig6(x: f64) -> String {
    format_sig(x, 6)
}

/// Six decimal places, the precision of the CLI's key=value output.
pub fn dec6(x: f64) -> String {
    format!("{x:.6}")
}
