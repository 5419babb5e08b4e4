//! Text form of actions and stated rewards.
//!
//! ```text
//! Current mIoU: 73            (optional)
//! Positive point: (175, 483)
//! Negative point: (0.100, 0.900)
//! Box: (0, 0, 999, 999)
//! ```
//!
//! Coordinates are quantized to a 1/1000 grid in both formats: integers in
//! `[0, 1000)` or three-decimal fractions in `[0, 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;
use crate::mask::{NormBox, NormPoint};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordFormat {
    /// `0.175`
    #[default]
    Decimal01,
    /// `175`
    Integer1000,
}

impl std::str::FromStr for CoordFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "decimal" | "decimal_0_1" | "decimal01" => Ok(CoordFormat::Decimal01),
            "integer" | "integer_0_1000" | "integer1000" => Ok(CoordFormat::Integer1000),
            other => Err(format!("unknown coordinate format `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty input")]
    Empty,
    #[error("unknown verb `{0}`")]
    UnknownVerb(String),
    #[error("value `{0}` out of range")]
    OutOfRange(String),
    #[error("malformed number `{0}`")]
    MalformedNumber(String),
    #[error("malformed action: {0}")]
    Malformed(String),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Empty => "empty",
            ParseError::UnknownVerb(_) => "unknown_verb",
            ParseError::OutOfRange(_) => "out_of_range",
            ParseError::MalformedNumber(_) => "malformed_number",
            ParseError::Malformed(_) => "malformed",
        }
    }
}

const GRID: f64 = 1000.0;
const REWARD_PREFIX: &str = "current miou:";

pub fn quantize(v: f64) -> u32 {
    (v * GRID).round().clamp(0.0, GRID - 1.0) as u32
}

fn fmt_coord(v: f64, format: CoordFormat) -> String {
    let q = quantize(v);
    match format {
        CoordFormat::Integer1000 => q.to_string(),
        CoordFormat::Decimal01 => format!("{:.3}", q as f64 / GRID),
    }
}

pub fn format_action(action: &Action, format: CoordFormat) -> String {
    let c = |v| fmt_coord(v, format);
    match action {
        Action::PositiveClick(p) => format!("Positive point: ({}, {})", c(p.x), c(p.y)),
        Action::NegativeClick(p) => format!("Negative point: ({}, {})", c(p.x), c(p.y)),
        Action::Box(b) => format!("Box: ({}, {}, {}, {})", c(b.x1), c(b.y1), c(b.x2), c(b.y2)),
    }
}

/// Integer percentage, rounding halves up.
pub fn reward_percent(reward: f64) -> u32 {
    (100.0 * reward + 0.5).floor().clamp(0.0, 100.0) as u32
}

pub fn format_reward(reward: f64) -> String {
    format!("Current mIoU: {}", reward_percent(reward))
}

/// Optional reward line followed by the action line.
pub fn format_response(stated_reward: Option<f64>, action: &Action, format: CoordFormat) -> String {
    match stated_reward {
        Some(r) => format!("{}\n{}", format_reward(r), format_action(action, format)),
        None => format_action(action, format),
    }
}

/// Parses a `Current mIoU: NN` line into `NN / 100`.
pub fn parse_reward(text: &str) -> Result<f64, ParseError> {
    let line = text.trim();
    if line.is_empty() {
        return Err(ParseError::Empty);
    }
    let lower = line.to_ascii_lowercase();
    let Some(rest) = lower.strip_prefix(REWARD_PREFIX) else {
        let verb = line.split(':').next().unwrap_or(line).trim();
        return Err(ParseError::UnknownVerb(verb.to_string()));
    };
    let num = rest.trim();
    let n: i64 = num
        .parse()
        .map_err(|_| ParseError::MalformedNumber(num.to_string()))?;
    if !(0..=100).contains(&n) {
        return Err(ParseError::OutOfRange(num.to_string()));
    }
    Ok(n as f64 / 100.0)
}

pub fn parse_action(text: &str, format: CoordFormat) -> Result<(Option<f64>, Action), ParseError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines.next().ok_or(ParseError::Empty)?;
    let (stated, action_line) = if first.to_ascii_lowercase().starts_with(REWARD_PREFIX) {
        let r = parse_reward(first)?;
        let next = lines
            .next()
            .ok_or_else(|| ParseError::Malformed("missing action line".into()))?;
        (Some(r), next)
    } else {
        (None, first)
    };
    if let Some(extra) = lines.next() {
        return Err(ParseError::Malformed(format!("unexpected trailing line `{extra}`")));
    }
    Ok((stated, parse_action_line(action_line, format)?))
}

fn parse_action_line(line: &str, format: CoordFormat) -> Result<Action, ParseError> {
    let (verb, rest) = line
        .split_once(':')
        .ok_or_else(|| ParseError::Malformed(format!("missing `:` in `{line}`")))?;
    let verb_norm = verb.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase();
    let arity = match verb_norm.as_str() {
        "positive point" | "negative point" => 2,
        "box" => 4,
        _ => return Err(ParseError::UnknownVerb(verb.trim().to_string())),
    };
    let body = rest.trim().trim_end_matches('.').trim_end();
    let inner = body
        .strip_prefix('(')
        .and_then(|b| b.strip_suffix(')'))
        .ok_or_else(|| ParseError::Malformed(format!("expected parenthesized coordinates in `{body}`")))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != arity {
        return Err(ParseError::Malformed(format!(
            "expected {arity} coordinates, got {}",
            parts.len()
        )));
    }
    let coords = parts
        .iter()
        .map(|p| parse_coord(p, format))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(match verb_norm.as_str() {
        "positive point" => Action::PositiveClick(NormPoint { x: coords[0], y: coords[1] }),
        "negative point" => Action::NegativeClick(NormPoint { x: coords[0], y: coords[1] }),
        _ => {
            let b = NormBox {
                x1: coords[0],
                y1: coords[1],
                x2: coords[2],
                y2: coords[3],
            };
            if !b.is_valid() {
                return Err(ParseError::Malformed("box corners out of order".into()));
            }
            Action::Box(b)
        }
    })
}

fn parse_coord(s: &str, format: CoordFormat) -> Result<f64, ParseError> {
    match format {
        CoordFormat::Integer1000 => {
            let n: i64 = s.parse().map_err(|_| ParseError::MalformedNumber(s.to_string()))?;
            if !(0..1000).contains(&n) {
                return Err(ParseError::OutOfRange(s.to_string()));
            }
            Ok(n as f64 / GRID)
        }
        CoordFormat::Decimal01 => {
            let v: f64 = s.parse().map_err(|_| ParseError::MalformedNumber(s.to_string()))?;
            if !v.is_finite() {
                return Err(ParseError::MalformedNumber(s.to_string()));
            }
            if !(0.0..1.0).contains(&v) {
                return Err(ParseError::OutOfRange(s.to_string()));
            }
            Ok(v)
        }
    }
}

/// Key for exact duplicate detection on the quantized grid.
pub fn action_key(action: &Action) -> (u8, [u32; 4]) {
    match action {
        Action::PositiveClick(p) => (0, [quantize(p.x), quantize(p.y), 0, 0]),
        Action::NegativeClick(p) => (1, [quantize(p.x), quantize(p.y), 0, 0]),
        Action::Box(b) => (2, [quantize(b.x1), quantize(b.y1), quantize(b.x2), quantize(b.y2)]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::ONE_BELOW;

    #[test]
    fn formats() {
        let a = Action::positive(0.175, 0.483);
        assert_eq!(format_action(&a, CoordFormat::Integer1000), "Positive point: (175, 483)");
        let n = Action::negative(0.25, 0.5);
        assert_eq!(format_action(&n, CoordFormat::Decimal01), "Negative point: (0.250, 0.500)");
        let b = Action::Box(NormBox {
            x1: 0.0,
            y1: 0.0,
            x2: ONE_BELOW,
            y2: ONE_BELOW,
        });
        assert_eq!(format_action(&b, CoordFormat::Integer1000), "Box: (0, 0, 999, 999)");
    }

    #[test]
    fn parses_literal_example() {
        let (r, a) = parse_action("Positive point: (175,483)", CoordFormat::Integer1000).unwrap();
        assert_eq!(r, None);
        assert_eq!(a, Action::positive(0.175, 0.483));
    }

    #[test]
    fn parses_reward_prefix() {
        let (r, a) = parse_action(
            "Current mIoU: 73\nNegative point: (0.100, 0.900)",
            CoordFormat::Decimal01,
        )
        .unwrap();
        assert_eq!(r, Some(0.73));
        assert_eq!(a, Action::negative(0.1, 0.9));
    }

    #[test]
    fn whitespace_and_case_tolerance() {
        let (_, a) = parse_action("  positive  Point :  ( 10 ,  20 ) .\n", CoordFormat::Integer1000).unwrap();
        assert_eq!(a, Action::positive(0.01, 0.02));
        let (_, b) = parse_action("Box:(1,2,3,4)", CoordFormat::Integer1000).unwrap();
        assert!(matches!(b, Action::Box(_)));
    }

    #[test]
    fn error_codes() {
        let code = |t: &str, f| parse_action(t, f).unwrap_err().code();
        assert_eq!(code("", CoordFormat::Integer1000), "empty");
        assert_eq!(code("  \n ", CoordFormat::Integer1000), "empty");
        assert_eq!(code("Scribble: (1, 2)", CoordFormat::Integer1000), "unknown_verb");
        assert_eq!(code("Positive point: (1200, 50)", CoordFormat::Integer1000), "out_of_range");
        assert_eq!(code("Positive point: (1.0, 0.5)", CoordFormat::Decimal01), "out_of_range");
        assert_eq!(code("Positive point: (-1, 5)", CoordFormat::Integer1000), "out_of_range");
        assert_eq!(code("Positive point: (1x, 5)", CoordFormat::Integer1000), "malformed_number");
        assert_eq!(code("Positive point: (0.5, 5)", CoordFormat::Integer1000), "malformed_number");
        assert_eq!(code("Positive point: (1, 2, 3)", CoordFormat::Integer1000), "malformed");
        assert_eq!(code("Positive point 1, 2", CoordFormat::Integer1000), "malformed");
        assert_eq!(code("Current mIoU: 50", CoordFormat::Integer1000), "malformed");
        assert_eq!(code("Current mIoU: 101\nBox: (0,0,1,1)", CoordFormat::Integer1000), "out_of_range");
    }

    #[test]
    fn reward_rendering() {
        assert_eq!(format_reward(0.734), "Current mIoU: 73");
        assert_eq!(format_reward(0.0), "Current mIoU: 0");
        assert_eq!(format_reward(0.125), "Current mIoU: 13");
        assert_eq!(format_reward(1.0), "Current mIoU: 100");
        assert_eq!(parse_reward("Current mIoU: 101").unwrap_err().code(), "out_of_range");
        assert_eq!(parse_reward("Current mIoU: 42").unwrap(), 0.42);
    }
}
