use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Dotted hierarchical indicator number such as `2.4.1`.
///
/// Ordering is lexicographic on the segments, which is also depth-first
/// document order: `2 < 2.1 < 2.2 < 2.2.1 < 2.3 < 3`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndicatorId(Vec<u32>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid indicator number `{text}`: {reason}")]
pub struct IdParseError {
    pub text: String,
    pub reason: &'static str,
}

impl IndicatorId {
    pub fn new(segments: Vec<u32>) -> Option<Self> {
        if segments.is_empty() || segments.contains(&0) {
            return None;
        }
        Some(IndicatorId(segments))
    }

    pub fn segments(&self) -> &[u32] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.len() == 1
    }

    pub fn parent(&self) -> Option<IndicatorId> {
        (self.0.len() > 1).then(|| IndicatorId(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn child(&self, segment: u32) -> IndicatorId {
        let mut segments = self.0.clone();
        segments.push(segment);
        IndicatorId(segments)
    }

    /// Strict ancestor test.
    pub fn is_ancestor_of(&self, other: &IndicatorId) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0)
    }

    /// Strict ancestors, nearest first.
    pub fn ancestors(&self) -> impl Iterator<Item = IndicatorId> + '_ {
        (1..self.0.len()).rev().map(move |len| IndicatorId(self.0[..len].to_vec()))
    }
}

impl FromStr for IndicatorId {
    type Err = IdParseError;

    /// Accepts a single trailing dot (`2.2.`) as typography.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| IdParseError { text: s.to_string(), reason };
        let trimmed = s.trim();
        let body = trimmed.strip_suffix('.').unwrap_or(trimmed);
        if body.is_empty() {
            return Err(err("empty number"));
        }
        let segments = body
            .split('.')
            .map(|part| {
                if part.is_empty() || !part.chars().all(|c| c.is_ascii_digit()) {
                    return Err(err("segments must be positive integers"));
                }
                match part.parse::<u32>() {
                    Ok(0) => Err(err("segments start at 1")),
                    Ok(n) => Ok(n),
                    Err(_) => Err(err("segment too large")),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IndicatorId(segments))
    }
}

impl fmt::Display for IndicatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, segment) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{segment}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for IndicatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IndicatorId({self})")
    }
}

impl Serialize for IndicatorId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IndicatorId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> IndicatorId {
        s.parse().unwrap()
    }

    #[test]
    fn document_order() {
        let mut ids: Vec<_> = ["3", "2.3", "2.2.1", "2", "2.2", "2.1", "2.10", "2.9"].into_iter().map(id).collect();
        ids.sort();
        let rendered: Vec<_> = ids.iter().map(ToString::to_string).collect();
        assert_eq!(rendered, ["2", "2.1", "2.2", "2.2.1", "2.3", "2.9", "2.10", "3"]);
    }

    #[test]
    fn parent_and_depth() {
        assert_eq!(id("2.4.1").parent(), Some(id("2.4")));
        assert_eq!(id("2").parent(), None);
        assert_eq!(id("2.4.1.1").depth(), 4);
        assert!(id("2").is_ancestor_of(&id("2.4.1")));
        assert!(!id("2.4").is_ancestor_of(&id("2.4")));
        assert!(!id("2.4").is_ancestor_of(&id("2.41")));
        let ancestors: Vec<_> = id("2.4.1.1").ancestors().map(|a| a.to_string()).collect();
        assert_eq!(ancestors, ["2.4.1", "2.4", "2"]);
    }

    #[test]
    fn trailing_dot_is_typography() {
        assert_eq!(id("2.2."), id("2.2"));
        assert_eq!(id("2.2.").to_string(), "2.2");
    }

    #[test]
    fn rejects_bad_segments() {
        for bad in ["", ".", "0", "2..1", "2.0", "a", "2.-1", "1.2..", " "] {
            assert!(bad.parse::<IndicatorId>().is_err(), "{bad:?} should be rejected");
        }
    }
}
