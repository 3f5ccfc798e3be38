use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed number `{token}`: {reason}")]
pub struct ValueError {
    pub token: String,
    pub reason: &'static str,
}

/// Engineering suffixes, longest match first so that `meg` wins over `m`.
const SUFFIXES: &[(&str, f64)] = &[
    ("meg", 1e6),
    ("f", 1e-15),
    ("p", 1e-12),
    ("n", 1e-9),
    ("u", 1e-6),
    ("m", 1e-3),
    ("k", 1e3),
    ("g", 1e9),
];

/// Length of the leading decimal-number prefix of `s`, or `None` if there is none.
fn number_prefix(s: &[u8]) -> Option<usize> {
    let mut i = 0;
    if i < s.len() && (s[i] == b'+' || s[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < s.len() && s[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < s.len() && s[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
        let mut j = i + 1;
        if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < s.len() && s[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    Some(i)
}

/// Parses a numeric literal with an optional engineering suffix
/// (`f p n u m k meg g`, case-insensitive).
pub fn parse_value(token: &str) -> Result<f64, ValueError> {
    let err = |reason| ValueError { token: token.to_string(), reason };
    let bytes = token.as_bytes();
    let end = number_prefix(bytes).ok_or_else(|| err("expected a number"))?;
    let mantissa: f64 = token[..end].parse().map_err(|_| err("expected a number"))?;
    let suffix = token[end..].to_ascii_lowercase();
    let scale = if suffix.is_empty() {
        1.0
    } else {
        SUFFIXES
            .iter()
            .find(|(s, _)| *s == suffix)
            .map(|&(_, k)| k)
            .ok_or_else(|| err("unknown suffix"))?
    };
    let v = mantissa * scale;
    if !v.is_finite() {
        return Err(err("value out of range"));
    }
    Ok(v)
}
