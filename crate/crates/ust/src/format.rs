//! Small text helpers shared by the commands.

use ust_core::model::Time;

use crate::error::{CliError, Result};

/// `x` with 12 significant digits, trailing zeros removed, in the style of
/// C's `%.12g`.
pub fn sig12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    // Round first; rounding can carry into the next decade.
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= DIGITS {
        return format!(
            "{}e{}{:02}",
            trim(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        );
    }
    let decimals = (DIGITS - 1 - exp).max(0) as usize;
    trim(&format!("{x:.decimals$}")).to_string()
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Parses timestamp lists such as `2-8,12,15`. The result is sorted and
/// free of duplicates.
pub fn parse_times(spec: &str) -> Result<Vec<Time>> {
    let bad = |m: String| CliError::Validation(format!("timestamps '{spec}': {m}"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(bad("empty item".into()));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<Time>()
                .map_err(|_| bad(format!("'{s}' is not a timestamp")))
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(bad(format!("range {a}-{b} is reversed")));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(spec: &str) -> Result<Vec<T>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Validation(format!("'{s}' in '{spec}' is not a number")))
        })
        .collect()
}
