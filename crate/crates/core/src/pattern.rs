//! Blocklist pattern grammar shared by corpus filtering and tribute moderation.
//!
//! ```text
//! pattern  := ["^"] body ["$"]
//! body     := { char | "*" | "\" char }
//! ```
//!
//! - A pattern without anchors matches if its body occurs anywhere in the text.
//! - `^` anchors the match at the start of the text, `$` at the end.
//! - `*` matches any run of characters, including none.
//! - `\` escapes the next character (`\*`, `\^`, `\$`, `\\`).
//!
//! Matching is case-insensitive (Unicode lowercase on both sides).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatternError {
    #[error("empty pattern")]
    Empty,
    #[error("pattern {0:?} ends with a dangling escape")]
    DanglingEscape(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    source: String,
    anchored_start: bool,
    anchored_end: bool,
    // Literal pieces between `*`s, lowercased.
    pieces: Vec<String>,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, PatternError> {
        if source.is_empty() {
            return Err(PatternError::Empty);
        }
        let mut chars = source.chars().peekable();
        let mut anchored_start = false;
        if chars.peek() == Some(&'^') {
            anchored_start = true;
            chars.next();
        }
        let mut pieces = vec![String::new()];
        let mut anchored_end = false;
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some(esc) => pieces.last_mut().unwrap().push(esc),
                    None => return Err(PatternError::DanglingEscape(source.to_owned())),
                },
                '*' => pieces.push(String::new()),
                '$' if chars.peek().is_none() => anchored_end = true,
                other => pieces.last_mut().unwrap().push(other),
            }
        }
        for piece in &mut pieces {
            *piece = piece.to_lowercase();
        }
        if pieces.iter().all(String::is_empty) && !anchored_start && !anchored_end {
            // A bare `*` would match everything; treat as a configuration mistake.
            return Err(PatternError::Empty);
        }
        Ok(Self {
            source: source.to_owned(),
            anchored_start,
            anchored_end,
            pieces,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, text: &str) -> bool {
        let text = text.to_lowercase();
        self.matches_lowered(&text)
    }

    fn matches_lowered(&self, text: &str) -> bool {
        let n = self.pieces.len();
        let first = &self.pieces[0];
        let last = &self.pieces[n - 1];
        let mut pos = 0usize;

        if self.anchored_start {
            if !text.starts_with(first.as_str()) {
                return false;
            }
            pos = first.len();
            if n == 1 {
                return !self.anchored_end || text.len() == first.len();
            }
        }

        let start_idx = usize::from(self.anchored_start);
        let end_idx = if self.anchored_end { n - 1 } else { n };
        for piece in &self.pieces[start_idx..end_idx.max(start_idx)] {
            match text[pos..].find(piece.as_str()) {
                Some(off) => pos += off + piece.len(),
                None => return false,
            }
        }

        if self.anchored_end && end_idx < n {
            // The final piece must sit at the very end, after everything matched so far.
            return text.len() >= pos + last.len() && text.ends_with(last.as_str());
        }
        true
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for Pattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::new(s)
    }
}

impl Serialize for Pattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Pattern::new(&s).map_err(serde::de::Error::custom)
    }
}

/// An ordered list of patterns; reports the first one that matches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatternSet(Vec<Pattern>);

impl PatternSet {
    pub fn new(patterns: Vec<Pattern>) -> Self {
        Self(patterns)
    }

    pub fn parse<S: AsRef<str>>(sources: &[S]) -> Result<Self, PatternError> {
        sources
            .iter()
            .map(|s| Pattern::new(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn first_match(&self, text: &str) -> Option<&Pattern> {
        let lowered = text.to_lowercase();
        self.0.iter().find(|p| p.matches_lowered(&lowered))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pattern> {
        self.0.iter()
    }
}
