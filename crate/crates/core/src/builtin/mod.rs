//! Rule-based extraction and resolution of built-in entities (numbers,
//! ordinals, temperatures, durations and datetimes).

mod datetime;
mod number;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::NormalizedText;

pub use datetime::resolve_datetime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BuiltinKind {
    #[serde(rename = "snips/number")]
    Number,
    #[serde(rename = "snips/ordinal")]
    Ordinal,
    #[serde(rename = "snips/temperature")]
    Temperature,
    #[serde(rename = "snips/duration")]
    Duration,
    #[serde(rename = "snips/datetime")]
    Datetime,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 5] = [
        BuiltinKind::Number,
        BuiltinKind::Ordinal,
        BuiltinKind::Temperature,
        BuiltinKind::Duration,
        BuiltinKind::Datetime,
    ];

    pub fn identifier(self) -> &'static str {
        match self {
            BuiltinKind::Number => "snips/number",
            BuiltinKind::Ordinal => "snips/ordinal",
            BuiltinKind::Temperature => "snips/temperature",
            BuiltinKind::Duration => "snips/duration",
            BuiltinKind::Datetime => "snips/datetime",
        }
    }

    pub fn from_identifier(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.identifier() == id)
    }

    /// Short lowercase name, e.g. "number".
    pub fn short_name(self) -> &'static str {
        &self.identifier()["snips/".len()..]
    }

    /// Placeholder token used when a match is abstracted away.
    pub fn class_token(self) -> String {
        format!("%SNIPS_{}%", self.short_name().to_uppercase())
    }

    /// Overlap tie-break rank; higher wins.
    fn precedence(self) -> u8 {
        match self {
            BuiltinKind::Datetime => 5,
            BuiltinKind::Duration => 4,
            BuiltinKind::Temperature => 3,
            BuiltinKind::Ordinal => 2,
            BuiltinKind::Number => 1,
        }
    }
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.identifier())
    }
}

impl FromStr for BuiltinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_identifier(s)
            .or_else(|| Self::from_identifier(&format!("snips/{s}")))
            .ok_or_else(|| Error::InvalidArgument(format!("unsupported builtin kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureUnit {
    Celsius,
    Fahrenheit,
    Degree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grain {
    Year,
    Month,
    Week,
    Day,
    Hour,
    Minute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstantTime {
    pub value: String,
    pub grain: Grain,
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DurationValue {
    pub years: i64,
    pub months: i64,
    pub days: i64,
    pub hours: i64,
    pub minutes: i64,
    pub seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ResolvedValue {
    Number {
        value: f64,
    },
    Ordinal {
        #[serde(rename = "value")]
        rank: i64,
    },
    Temperature {
        value: f64,
        unit: TemperatureUnit,
    },
    Duration(DurationValue),
    InstantTime(InstantTime),
}

/// Reference instant used as "now" when resolving relative datetimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceTime(pub DateTime<FixedOffset>);

impl ReferenceTime {
    pub fn parse(iso: &str) -> Result<Self> {
        DateTime::parse_from_rfc3339(iso)
            .map(ReferenceTime)
            .map_err(|e| Error::InvalidArgument(format!("invalid reference time '{iso}': {e}")))
    }

    pub fn now() -> Self {
        ReferenceTime(chrono::Local::now().fixed_offset())
    }
}

impl FromStr for ReferenceTime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinMatch {
    pub kind: BuiltinKind,
    /// Matched surface text.
    pub value: String,
    /// Character range in the original text.
    #[serde(rename = "range")]
    pub span: Range<usize>,
    /// Half-open range of token indices.
    #[serde(rename = "token_range")]
    pub tokens: Range<usize>,
    pub resolved: ResolvedValue,
}

fn temperature_unit_at(words: &[&str], i: usize) -> Option<(TemperatureUnit, usize)> {
    let scale = |w: Option<&&str>| match w {
        Some(&"celsius") | Some(&"centigrade") => Some(TemperatureUnit::Celsius),
        Some(&"fahrenheit") => Some(TemperatureUnit::Fahrenheit),
        _ => None,
    };
    match *words.get(i)? {
        "°c" => Some((TemperatureUnit::Celsius, 1)),
        "°f" => Some((TemperatureUnit::Fahrenheit, 1)),
        "°" => match scale(words.get(i + 1)) {
            Some(unit) => Some((unit, 2)),
            None => Some((TemperatureUnit::Degree, 1)),
        },
        "degree" | "degrees" => match scale(words.get(i + 1)) {
            Some(unit) => Some((unit, 2)),
            None => Some((TemperatureUnit::Degree, 1)),
        },
        _ => scale(words.get(i)).map(|unit| (unit, 1)),
    }
}

/// Longest match of a single kind starting at token `i`.
fn match_kind_at(
    kind: BuiltinKind,
    words: &[&str],
    i: usize,
    reference: &ReferenceTime,
) -> Option<(ResolvedValue, usize)> {
    match kind {
        BuiltinKind::Number => {
            number::number_at(words, i).map(|(value, len)| (ResolvedValue::Number { value }, len))
        }
        BuiltinKind::Ordinal => {
            number::ordinal_at(words, i).map(|(rank, len)| (ResolvedValue::Ordinal { rank }, len))
        }
        BuiltinKind::Temperature => {
            let (value, len) = number::number_at(words, i)?;
            let (unit, unit_len) = temperature_unit_at(words, i + len)?;
            Some((ResolvedValue::Temperature { value, unit }, len + unit_len))
        }
        BuiltinKind::Duration => datetime::duration_at(words, i)
            .map(|(value, len)| (ResolvedValue::Duration(value), len)),
        BuiltinKind::Datetime => datetime::datetime_at(words, i, &reference.0)
            .map(|(value, len)| (ResolvedValue::InstantTime(value), len)),
    }
}

/// Non-overlapping builtin matches of the kinds in `scope`.
///
/// Overlaps are resolved by longer span first, then kind precedence
/// (datetime > duration > temperature > ordinal > number), then leftmost.
/// The result is sorted by position.
pub fn extract_builtin(
    nt: &NormalizedText,
    scope: &BTreeSet<BuiltinKind>,
    reference: &ReferenceTime,
) -> Vec<BuiltinMatch> {
    let words = nt.texts();
    let mut candidates = Vec::new();
    for i in 0..words.len() {
        for &kind in scope {
            if let Some((resolved, len)) = match_kind_at(kind, &words, i, reference) {
                candidates.push((i..i + len, kind, resolved));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.len()
            .cmp(&a.0.len())
            .then(b.1.precedence().cmp(&a.1.precedence()))
            .then(a.0.start.cmp(&b.0.start))
    });
    let mut taken = vec![false; words.len()];
    let mut out = Vec::new();
    for (tokens, kind, resolved) in candidates {
        if taken[tokens.clone()].iter().any(|t| *t) {
            continue;
        }
        taken[tokens.clone()].iter_mut().for_each(|t| *t = true);
        let span = nt.char_span(tokens.clone()).expect("non-empty token range");
        out.push(BuiltinMatch {
            kind,
            value: nt.substring(&span),
            span,
            tokens,
            resolved,
        });
    }
    out.sort_by_key(|m| m.tokens.start);
    out
}

/// Resolve a token sequence that must be matched in full by `kind`.
pub fn resolve_exact(
    kind: BuiltinKind,
    words: &[&str],
    reference: &ReferenceTime,
) -> Option<ResolvedValue> {
    match match_kind_at(kind, words, 0, reference) {
        Some((value, len)) if len == words.len() => Some(value),
        _ => None,
    }
}

/// Human-readable listing of the supported grammars.
pub fn supported_grammar() -> String {
    let mut out = String::from(
        "number   ::= [minus] (<digits>[.<digits>] | <cardinal words> [point <digit words>])\n\
         ordinal  ::= <digits>(st|nd|rd|th) | [<cardinal words>] <ordinal word>\n\
         temperature ::= <number> (°c | °f | ° | degree[s] [celsius|fahrenheit] | celsius | fahrenheit)\n",
    );
    out.push_str(datetime::GRAMMAR);
    out
}
