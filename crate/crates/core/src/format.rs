//! Output formatting shared by every CSV writer: C-style `%.12g` floats,
//! comma-joined rows, LF line endings.

/// Significant digits used for every floating value written to disk.
pub const SIG_DIGITS: usize = 12;

/// Formats `v` the way C's `printf("%.{digits}g", v)` does.
pub fn fmt_g(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let p = digits.max(1);
    // Rust's `{:e}` rounds correctly, so the decimal exponent after rounding
    // to `p` significant digits can be read straight off it.
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, v)).to_string()
    }
}

/// `%.12g`.
pub fn g12(v: f64) -> String {
    fmt_g(v, SIG_DIGITS)
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Joins already-formatted fields into one CSV line (with trailing LF).
pub fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut line = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(f.as_ref());
    }
    line.push('\n');
    line
}

/// Formats a float row with `%.12g`.
pub fn csv_floats(values: &[f64]) -> String {
    csv_line(values.iter().map(|&v| g12(v)))
}
