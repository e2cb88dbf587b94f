//! Number formatting shared by every table writer.

/// `x` rounded to six significant digits, in plain notation when the
/// exponent lies in `[-5, 15)` and scientific notation otherwise.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..15).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let rounded: f64 = sci.parse().expect("round-trips");
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{rounded:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A probability in percent with three decimals (`0.23637 → "23.637"`).
pub fn percent3(p: f64) -> String {
    format!("{:.3}", 100.0 * p)
}
