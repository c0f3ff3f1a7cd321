/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// 12 significant digits, shortest round-trip text of the rounded value.
pub fn format_float(x: f64) -> String {
    let r = round_sig(x, 12);
    if r == 0.0 {
        "0".to_owned()
    } else {
        r.to_string()
    }
}
