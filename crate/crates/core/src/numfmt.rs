//! Fixed-precision number formatting for text outputs.

/// Formats `x` with `digits` significant digits, switching to scientific
/// notation for very large or small magnitudes.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exponent = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&exponent) {
        return format!("{:.*e}", digits.saturating_sub(1), x);
    }
    let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.999995 -> 10.00000).
    let s = if s
        .trim_start_matches('-')
        .replace('.', "")
        .trim_start_matches('0')
        .len()
        > digits
        && decimals > 0
    {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Six significant digits, the precision of every printed metric.
pub fn sig6(x: f64) -> String {
    sig(x, 6)
}
