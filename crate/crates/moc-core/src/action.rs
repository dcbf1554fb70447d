//! Text codec for planar end-effector actions.
//!
//! The canonical production is
//! `Move to (<x:0.ddd>, <y:0.ddd>) with rotation <int> degrees.`
//! with exactly three decimals on the coordinates and integer degrees.
//! [`extract`] scans rather than full-matches, so answers may carry
//! surrounding prose; it is total over arbitrary strings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("action list is empty")]
    EmptyActions,
    #[error("action ({x}, {y}, {theta}) violates invariants (x,y in [0,1], theta in [-180,180))")]
    InvalidAction { x: f64, y: f64, theta: f64 },
    #[error("no action found in text")]
    NoActionFound,
    #[error("coordinate out of range in match {snippet:?}")]
    CoordinateOutOfRange { snippet: String },
    #[error("rotation out of range in match {snippet:?}")]
    ThetaOutOfRange { snippet: String },
}

/// A planar end-effector command: normalized image coordinates plus a
/// rotation in degrees, half-open range `[-180, 180)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Action {
    pub fn new(x: f64, y: f64, theta: f64) -> Result<Self, ActionError> {
        let a = Self { x, y, theta };
        if a.is_valid() {
            Ok(a)
        } else {
            Err(ActionError::InvalidAction { x, y, theta })
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.x)
            && (0.0..=1.0).contains(&self.y)
            && self.theta >= -180.0
            && self.theta < 180.0
    }
}

/// An answer string together with the actions it encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionAnswer {
    pub actions: Vec<Action>,
    pub surface_text: String,
}

impl ActionAnswer {
    /// Serializes `actions` and keeps both forms.
    pub fn new(actions: Vec<Action>) -> Result<Self, ActionError> {
        let surface_text = serialize(&actions)?;
        Ok(Self {
            actions,
            surface_text,
        })
    }
}

/// Renders one action in the canonical grammar. The rotation is rounded to
/// the nearest integer degree and wrapped into `[-180, 180)`.
pub fn format_action(a: &Action) -> String {
    let mut deg = a.theta.round();
    if deg >= 180.0 {
        deg -= 360.0;
    }
    format!(
        "Move to ({:.3}, {:.3}) with rotation {} degrees.",
        a.x, a.y, deg as i64
    )
}

/// Serializes a non-empty list of valid actions, one sentence per action,
/// joined by single spaces.
pub fn serialize(actions: &[Action]) -> Result<String, ActionError> {
    if actions.is_empty() {
        return Err(ActionError::EmptyActions);
    }
    for a in actions {
        if !a.is_valid() {
            return Err(ActionError::InvalidAction {
                x: a.x,
                y: a.y,
                theta: a.theta,
            });
        }
    }
    Ok(actions
        .iter()
        .map(format_action)
        .collect::<Vec<_>>()
        .join(" "))
}

/// Parses "d.ddd" with exactly three decimals. Returns the value and the
/// number of bytes consumed.
fn parse_coord(s: &str) -> Option<(f64, usize)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == 0 || i + 3 >= bytes.len() || bytes[i] != b'.' {
        return None;
    }
    let frac = &bytes[i + 1..i + 4];
    if !frac.iter().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let text = &s[..i + 4];
    text.parse::<f64>().ok().map(|v| (v, i + 4))
}

/// Parses an optionally signed integer. Returns the value (as f64, so
/// over-long digit strings still range-check) and bytes consumed.
fn parse_int(s: &str) -> Option<(f64, usize)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
        i += 1;
    }
    let start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == start {
        return None;
    }
    s[..i].parse::<f64>().ok().map(|v| (v, i))
}

fn expect(s: &str, literal: &str) -> Option<usize> {
    s.starts_with(literal).then_some(literal.len())
}

/// Tries to parse one full production at the start of `s`. On a grammar
/// match returns the parsed fields and total length; range checking is the
/// caller's job.
fn parse_production(s: &str) -> Option<(f64, f64, f64, usize)> {
    let mut pos = expect(s, "Move to (")?;
    let (x, used) = parse_coord(&s[pos..])?;
    pos += used;
    pos += expect(&s[pos..], ", ")?;
    let (y, used) = parse_coord(&s[pos..])?;
    pos += used;
    pos += expect(&s[pos..], ") with rotation ")?;
    let (theta, used) = parse_int(&s[pos..])?;
    pos += used;
    pos += expect(&s[pos..], " degrees.")?;
    Some((x, y, theta, pos))
}

/// Extracts every grammar match from `text`, in order. Matches with
/// out-of-range values are errors naming the offending snippet; text with
/// no match at all is a distinct error.
pub fn extract(text: &str) -> Result<Vec<Action>, ActionError> {
    const HEAD: &str = "Move to (";
    let mut actions = Vec::new();
    let mut offset = 0;
    while let Some(found) = text[offset..].find(HEAD) {
        let start = offset + found;
        match parse_production(&text[start..]) {
            Some((x, y, theta, len)) => {
                let snippet = || text[start..start + len].to_string();
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    return Err(ActionError::CoordinateOutOfRange { snippet: snippet() });
                }
                if !(-180.0..180.0).contains(&theta) {
                    return Err(ActionError::ThetaOutOfRange { snippet: snippet() });
                }
                actions.push(Action { x, y, theta });
                offset = start + len;
            }
            None => offset = start + HEAD.len(),
        }
    }
    if actions.is_empty() {
        return Err(ActionError::NoActionFound);
    }
    Ok(actions)
}
