//! Fixed six-significant-digit number formatting.

/// Six significant digits in positional notation, switching to scientific
/// notation outside `[1e-4, 1e6)`. Non-finite values print as-is.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let a = v.abs();
    if !(1e-4..1e6).contains(&a) {
        return format!("{v:.5e}");
    }
    let exp = a.log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding can carry into a new leading digit (9.999995 -> 10.00000).
    let digits = s.chars().filter(|c| c.is_ascii_digit()).count();
    let leading_zeros = s.trim_start_matches('-').chars().take_while(|&c| c == '0' || c == '.').filter(|&c| c == '0').count();
    if digits - leading_zeros > 6 && decimals > 0 {
        let d = decimals - 1;
        format!("{v:.d$}")
    } else {
        s
    }
}

pub fn opt_sig6(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), sig6)
}
