//! Response grammar for model replies.
//!
//! Replies carry labelled fields introduced by a marker at the start of a
//! line: `TYPE:`, `REASON:` and `INTERPRETATION:`. A `Score:` marker may
//! appear anywhere. Markers are case-insensitive, accept a fullwidth colon
//! and tolerate markdown emphasis around them. A field's value runs until
//! the next line-start marker.

use serde::{Deserialize, Serialize};

use crate::ingest::InscriptionType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    TypedClassification,
    Interpretation,
    JudgeScore,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable response at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

impl ParseError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        ParseError {
            offset,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parsed {
    TypedClassification {
        inscription_type: InscriptionType,
        reason: String,
    },
    Interpretation {
        text: String,
    },
    JudgeScore {
        score: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Type,
    Reason,
    Interpretation,
}

const MARKERS: [(Marker, &str); 3] = [
    (Marker::Type, "type"),
    (Marker::Reason, "reason"),
    (Marker::Interpretation, "interpretation"),
];

struct Field {
    marker: Marker,
    /// Offset of the marker itself.
    at: usize,
    /// Offset where the value begins.
    value_at: usize,
    value: String,
}

fn skip_decoration(s: &str, from: usize) -> usize {
    let rest = &s[from..];
    from + (rest.len() - rest.trim_start_matches(['*', '_', ' ', '\t']).len())
}

/// If `s[from..]` is `<word><decoration>:` returns the offset after the colon.
fn match_marker(s: &str, from: usize, word: &str) -> Option<usize> {
    let rest = &s[from..];
    if rest.len() < word.len() || !rest.is_char_boundary(word.len()) {
        return None;
    }
    if !rest[..word.len()].eq_ignore_ascii_case(word) {
        return None;
    }
    let mut i = from + word.len();
    i += s[i..].len() - s[i..].trim_start_matches(['*', ' ', '\t']).len();
    let tail = &s[i..];
    let colon = if tail.starts_with(':') {
        1
    } else if tail.starts_with('：') {
        '：'.len_utf8()
    } else {
        return None;
    };
    Some(skip_decoration(s, i + colon))
}

fn line_marker(raw: &str, line_start: usize) -> Option<(Marker, usize)> {
    let lead = raw[line_start..].len()
        - raw[line_start..]
            .trim_start_matches(['*', '#', '>', ' ', '\t'])
            .len();
    let at = line_start + lead;
    MARKERS
        .iter()
        .find_map(|(m, w)| match_marker(raw, at, w).map(|v| (*m, v)))
}

fn clean_value(v: &str) -> String {
    v.trim().trim_matches(|c: char| c == '*' || c.is_whitespace()).to_string()
}

fn fields(raw: &str) -> Vec<Field> {
    let mut starts = vec![0];
    starts.extend(raw.match_indices('\n').map(|(i, _)| i + 1));
    let mut found: Vec<(Marker, usize, usize)> = Vec::new();
    for &ls in &starts {
        if ls > raw.len() {
            continue;
        }
        if let Some((m, v)) = line_marker(raw, ls) {
            found.push((m, ls, v));
        }
    }
    let mut out = Vec::new();
    for (i, &(marker, at, value_at)) in found.iter().enumerate() {
        let end = found.get(i + 1).map(|f| f.1).unwrap_or(raw.len());
        let end = end.max(value_at);
        out.push(Field {
            marker,
            at,
            value_at,
            value: clean_value(&raw[value_at..end]),
        });
    }
    out
}

fn parse_type_value(v: &str) -> Option<InscriptionType> {
    let first = v.lines().next().unwrap_or("");
    let stripped = first
        .trim()
        .trim_matches(|c: char| matches!(c, '<' | '>' | '[' | ']' | '"' | '\'' | '.' | '。' | '`'));
    stripped.parse().ok()
}

fn parse_typed(raw: &str) -> Result<Parsed, ParseError> {
    let fs = fields(raw);
    let types: Vec<&Field> = fs.iter().filter(|f| f.marker == Marker::Type).collect();
    let Some(first) = types.first() else {
        return Err(ParseError::new(0, "no TYPE: marker"));
    };
    let ty = parse_type_value(&first.value).ok_or_else(|| {
        ParseError::new(
            first.value_at,
            format!("`{}` is not one of ideographic, pictographic, phono-semantic", first.value.lines().next().unwrap_or("")),
        )
    })?;
    for other in &types[1..] {
        if parse_type_value(&other.value) != Some(ty) {
            return Err(ParseError::new(other.at, "conflicting TYPE: markers"));
        }
    }
    let reason = fs
        .iter()
        .find(|f| f.marker == Marker::Reason)
        .ok_or_else(|| ParseError::new(raw.len(), "no REASON: marker"))?;
    if reason.value.is_empty() {
        return Err(ParseError::new(reason.value_at, "empty REASON"));
    }
    Ok(Parsed::TypedClassification {
        inscription_type: ty,
        reason: reason.value.clone(),
    })
}

fn parse_interpretation(raw: &str) -> Result<Parsed, ParseError> {
    let fs = fields(raw);
    let f = fs
        .iter()
        .find(|f| f.marker == Marker::Interpretation)
        .ok_or_else(|| ParseError::new(0, "no INTERPRETATION: marker"))?;
    if f.value.is_empty() {
        return Err(ParseError::new(f.value_at, "empty INTERPRETATION"));
    }
    Ok(Parsed::Interpretation { text: f.value.clone() })
}

/// Leading decimal number of `s` (digits with an optional fraction).
fn leading_number(s: &str) -> Option<(f64, usize)> {
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i;
    if i < b.len() && b[i] == b'.' {
        let mut j = i + 1;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > i + 1 {
            i = j;
        }
    }
    if int_digits == 0 && i == 0 {
        return None;
    }
    s[..i].parse().ok().map(|v| (v, i))
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn parse_score(raw: &str) -> Result<Parsed, ParseError> {
    let lower = raw.to_ascii_lowercase();
    let mut first_marker = None;
    for (at, _) in lower.match_indices("score") {
        let Some(mut v) = match_marker(raw, at, "score") else {
            continue;
        };
        first_marker.get_or_insert(v);
        v += raw[v..].len() - raw[v..].trim_start_matches(['[', ' ', '\t']).len();
        if raw[v..].starts_with('-') && leading_number(&raw[v + 1..]).is_some() {
            return Err(ParseError::new(v, "score below 0.00"));
        }
        if let Some((x, _)) = leading_number(&raw[v..]) {
            if !(0.0..=1.0).contains(&x) {
                return Err(ParseError::new(v, format!("score {x} outside [0.00, 1.00]")));
            }
            return Ok(Parsed::JudgeScore { score: round2(x) });
        }
    }
    Err(match first_marker {
        Some(v) => ParseError::new(v, "Score: marker without a number"),
        None => ParseError::new(0, "no Score: marker"),
    })
}

/// Extracts the fields `expected` calls for. Never panics: every input
/// yields either fields or an error carrying a byte offset into `raw`.
pub fn parse_model_response(raw: &str, expected: Expected) -> Result<Parsed, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::new(0, "empty response"));
    }
    match expected {
        Expected::TypedClassification => parse_typed(raw),
        Expected::Interpretation => parse_interpretation(raw),
        Expected::JudgeScore => parse_score(raw),
    }
}

/// One validated line of a retriever plan: `CALL <tool>: <argument>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanLine {
    pub tool: String,
    pub argument: String,
}

/// Reads `CALL tool: argument` lines; other lines are ignored. Returns an
/// error at the first CALL line that does not follow the grammar.
pub fn parse_plan_lines(raw: &str) -> Result<Vec<PlanLine>, ParseError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_start_matches(|c: char| c == '-' || c == '*' || c.is_whitespace());
        let lead = line.len() - trimmed.len();
        if trimmed.len() < 4 || !trimmed.is_char_boundary(4) || !trimmed[..4].eq_ignore_ascii_case("call") {
            continue;
        }
        let body = trimmed[4..].trim_end();
        let Some(sep) = body.find([':', '：']) else {
            return Err(ParseError::new(start + lead, "CALL line without `:`"));
        };
        let tool = body[..sep].trim();
        let colon_len = body[sep..].chars().next().map(char::len_utf8).unwrap_or(1);
        let argument = body[sep + colon_len..].trim();
        if tool.is_empty() || argument.is_empty() {
            return Err(ParseError::new(start + lead, "CALL line missing tool or argument"));
        }
        out.push(PlanLine {
            tool: tool.to_string(),
            argument: argument.to_string(),
        });
    }
    Ok(out)
}
