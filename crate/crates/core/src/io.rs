//! Plain-text vector files and round-trip float formatting.
//!
//! Vector files hold one decimal value per line. Blank lines are skipped and
//! anything after a `#` is a comment. Values are written with 17 significant
//! digits in the style of C's `%.17g`, so a write/read cycle is lossless.

use crate::error::{Error, Result};

/// Formats `x` the way C's `printf("%.17g", x)` does.
pub fn fmt_g17(x: f64) -> String {
    const PRECISION: i32 = 17;
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= PRECISION {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (PRECISION - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Serializes a vector, one `%.17g` value per line.
pub fn format_vector(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for v in values {
        out.push_str(&fmt_g17(*v));
        out.push('\n');
    }
    out
}

/// Parses the vector file format.
pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let value: f64 = content.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            detail: format!("not a number: {content:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: idx + 1,
                detail: format!("non-finite value: {content:?}"),
            });
        }
        values.push(value);
    }
    Ok(values)
}

/// Parses rows of comma- or whitespace-separated numbers, with the same comment rules.
pub fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    detail: format!("not a number: {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_c_printf_style() {
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(123456.0), "123456");
        assert_eq!(fmt_g17(0.0001), "0.0001");
        assert_eq!(fmt_g17(0.0), "0");
    }

    #[test]
    fn reader_skips_comments_and_blanks() {
        let text = "# header\n1.5\n\n  -2 # trailing\n3e-3\n";
        assert_eq!(parse_vector(text).unwrap(), vec![1.5, -2.0, 3e-3]);
    }

    #[test]
    fn reader_reports_bad_line() {
        let err = parse_vector("1\nabc\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                detail: "not a number: \"abc\"".into()
            }
        );
    }

    #[test]
    fn rows_accept_commas_and_spaces() {
        let rows = parse_rows("1, 2,3\n# c\n4 5 6\n").unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
    }

    proptest! {
        #[test]
        fn g17_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let s = fmt_g17(x);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
