//! Exact three-digit fixed-point scores.
//!
//! Every weight and score in the engine is a whole number of thousandths.
//! Arithmetic never touches binary floating point, so sums such as
//! `4.000 - 1.000 + 0.360 + 0.280 + 0.080` compare exactly.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const SCALE: i64 = 1000;

/// A signed score with exactly three fractional digits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreParseError {
    #[error("empty score")]
    Empty,
    #[error("score `{0}` is not a decimal number")]
    Syntax(String),
    #[error("score `{0}` must have exactly three fractional digits")]
    Precision(String),
    #[error("score `{0}` cannot be represented in thousandths")]
    Inexact(String),
    #[error("score `{0}` is out of range")]
    Overflow(String),
}

impl Score {
    pub const ZERO: Score = Score(0);
    pub const ONE: Score = Score(SCALE);
    pub const FOUR: Score = Score(4 * SCALE);

    pub const fn from_thousandths(value: i64) -> Self {
        Score(value)
    }

    pub const fn thousandths(self) -> i64 {
        self.0
    }

    pub const fn from_int(value: i64) -> Self {
        Score(value * SCALE)
    }

    pub fn abs(self) -> Self {
        Score(self.0.abs())
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn clamp_to(self, floor: Score, ceiling: Score) -> Self {
        Score(self.0.clamp(floor.0, ceiling.0))
    }

    /// Smallest integer `n` with `n >= self`.
    pub fn ceil_int(self) -> i64 {
        self.0.div_euclid(SCALE) + i64::from(self.0.rem_euclid(SCALE) != 0)
    }

    /// Largest integer `n` with `n <= self`.
    pub fn floor_int(self) -> i64 {
        self.0.div_euclid(SCALE)
    }

    /// Lossy conversion for charting only.
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    /// Strict catalog form: optional `-`, integer digits, `.`, exactly three digits.
    pub fn parse_strict(text: &str) -> Result<Self, ScoreParseError> {
        let (negative, body) = split_sign(text)?;
        let (int_part, frac_part) = body.split_once('.').ok_or_else(|| ScoreParseError::Precision(text.to_string()))?;
        if frac_part.len() != 3 {
            return Err(ScoreParseError::Precision(text.to_string()));
        }
        assemble(text, negative, int_part, frac_part)
    }

    /// Lenient form used by the ingestion adapter: `-1`, `.5`, `0.36`, `0.3600`
    /// are all accepted as long as the value is a whole number of thousandths.
    pub fn parse_lenient(text: &str) -> Result<Self, ScoreParseError> {
        let (negative, body) = split_sign(text)?;
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        let trimmed = frac_part.trim_end_matches('0');
        if trimmed.len() > 3 {
            return Err(ScoreParseError::Inexact(text.to_string()));
        }
        let mut frac = trimmed.to_string();
        while frac.len() < 3 {
            frac.push('0');
        }
        let int_part = if int_part.is_empty() { "0" } else { int_part };
        if !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(ScoreParseError::Syntax(text.to_string()));
        }
        assemble(text, negative, int_part, &frac)
    }
}

fn split_sign(text: &str) -> Result<(bool, &str), ScoreParseError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ScoreParseError::Empty);
    }
    Ok(match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    })
}

fn assemble(original: &str, negative: bool, int_part: &str, frac: &str) -> Result<Score, ScoreParseError> {
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    if !digits(int_part) || !digits(frac) {
        return Err(ScoreParseError::Syntax(original.to_string()));
    }
    let overflow = || ScoreParseError::Overflow(original.to_string());
    let whole: i64 = int_part.parse().map_err(|_| overflow())?;
    let fraction: i64 = frac.parse().map_err(|_| overflow())?;
    let magnitude = whole.checked_mul(SCALE).and_then(|v| v.checked_add(fraction)).ok_or_else(overflow)?;
    Ok(Score(if negative { -magnitude } else { magnitude }))
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let magnitude = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", magnitude / SCALE as u64, magnitude % SCALE as u64)
    }
}

impl FromStr for Score {
    type Err = ScoreParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Score::parse_strict(s)
    }
}

impl Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        Score(self.0 + rhs.0)
    }
}

impl AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        self.0 += rhs.0;
    }
}

impl Sub for Score {
    type Output = Score;
    fn sub(self, rhs: Score) -> Score {
        Score(self.0 - rhs.0)
    }
}

impl Neg for Score {
    type Output = Score;
    fn neg(self) -> Score {
        Score(-self.0)
    }
}

impl Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Score {
        iter.fold(Score::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Score> for Score {
    fn sum<I: Iterator<Item = &'a Score>>(iter: I) -> Score {
        iter.copied().sum()
    }
}

// JSON carries scores as strings ("-0.280") so that no consumer ever sees a
// binary float.
impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Score::parse_strict(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_three_digits() {
        assert_eq!(Score::from_thousandths(-280).to_string(), "-0.280");
        assert_eq!(Score::from_thousandths(0).to_string(), "0.000");
        assert_eq!(Score::from_thousandths(2380).to_string(), "2.380");
        assert_eq!(Score::from_thousandths(-1000).to_string(), "-1.000");
    }

    #[test]
    fn strict_parse() {
        assert_eq!("-0.280".parse::<Score>().unwrap(), Score::from_thousandths(-280));
        assert_eq!("4.000".parse::<Score>().unwrap(), Score::FOUR);
        assert!("0.28".parse::<Score>().is_err());
        assert!("1".parse::<Score>().is_err());
        assert!("a.000".parse::<Score>().is_err());
        assert!("".parse::<Score>().is_err());
        assert!("--1.000".parse::<Score>().is_err());
    }

    #[test]
    fn lenient_parse() {
        assert_eq!(Score::parse_lenient("-1").unwrap(), -Score::ONE);
        assert_eq!(Score::parse_lenient("0.36").unwrap(), Score::from_thousandths(360));
        assert_eq!(Score::parse_lenient(".5").unwrap(), Score::from_thousandths(500));
        assert_eq!(Score::parse_lenient("0.0900").unwrap(), Score::from_thousandths(90));
        assert!(matches!(Score::parse_lenient("0.0001"), Err(ScoreParseError::Inexact(_))));
    }

    #[test]
    fn ceil_and_floor() {
        let s = Score::from_thousandths;
        assert_eq!(s(2380).ceil_int(), 3);
        assert_eq!(s(2000).ceil_int(), 2);
        assert_eq!(s(-500).ceil_int(), 0);
        assert_eq!(s(-1500).ceil_int(), -1);
        assert_eq!(s(-500).floor_int(), -1);
        assert_eq!(s(2999).floor_int(), 2);
    }

    #[test]
    fn json_is_a_string() {
        let json = serde_json::to_string(&Score::from_thousandths(-1270)).unwrap();
        assert_eq!(json, "\"-1.270\"");
        let back: Score = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Score::from_thousandths(-1270));
    }
}
