//! Frequency parsing with SI suffixes and engineering-notation output.

/// Parses `85000`, `85k`, `6.78M` or `1e6` as hertz. An optional trailing
/// `Hz` is accepted.
pub fn parse_frequency(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let t = t.strip_suffix("Hz").unwrap_or(t).trim_end();
    let (number, scale) = match t.char_indices().last() {
        Some((i, 'k')) => (&t[..i], 1e3),
        Some((i, 'M')) => (&t[..i], 1e6),
        _ => (t, 1.0),
    };
    let value: f64 = number
        .parse()
        .map_err(|_| format!("invalid frequency {text:?}; expected e.g. 85k, 6.78M or 200000"))?;
    let hz = value * scale;
    if hz.is_finite() && hz > 0.0 {
        Ok(hz)
    } else {
        Err(format!("frequency must be positive, got {text:?}"))
    }
}

/// `12.34e-6` style: four significant digits, exponent a multiple of 3.
pub fn engineering(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return value.to_string();
    }
    let mut exp = (value.abs().log10() / 3.0).floor() as i32 * 3;
    let mut mantissa = value / 10f64.powi(exp);
    let mut text = round_sig(mantissa);
    if text.trim_start_matches('-').starts_with("1000") {
        exp += 3;
        mantissa /= 1000.0;
        text = round_sig(mantissa);
    }
    if exp == 0 {
        text
    } else {
        format!("{text}e{exp}")
    }
}

fn round_sig(mantissa: f64) -> String {
    let decimals = match mantissa.abs() {
        m if m < 10.0 => 3,
        m if m < 100.0 => 2,
        _ => 1,
    };
    format!("{mantissa:.decimals$}")
}
