//! Number formatting shared by every CSV/JSON artifact writer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NumberFormat {
    /// `%g`-style with this many significant digits.
    Significant(usize),
    /// Shortest decimal that round-trips to the same `f64`.
    #[default]
    Shortest,
}

impl NumberFormat {
    pub const DEFAULT_ARTIFACT: NumberFormat = NumberFormat::Significant(6);

    pub fn fmt(self, x: f64) -> String {
        match self {
            NumberFormat::Shortest => format_shortest(x),
            NumberFormat::Significant(digits) => format_significant(x, digits),
        }
    }
}

fn format_shortest(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        x.to_string()
    }
}

/// C `%.{digits}g`: fixed notation when the decimal exponent lies in
/// `[-4, digits)`, scientific otherwise, trailing zeros removed.
pub fn format_significant(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if !x.is_finite() {
        return format_shortest(x);
    }
    if x == 0.0 {
        return "0".into();
    }
    // round first so that e.g. 9.999995 picks up the carried exponent
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { "-" } else { "+" };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
