//! Exact-match parser built from training utterances.
//!
//! Every utterance yields an anchored regular expression over normalized
//! text. Custom slots become named alternations over all known values of the
//! entity. Builtin slots additionally yield a generalized pattern in which the
//! slot is a placeholder such as `%SNIPS_NUMBER%`; queries are matched against
//! those patterns after their builtin matches have been replaced by the same
//! placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::align::{align_utterance, SlotMatch};
use crate::builtin::{extract_builtin, BuiltinKind, BuiltinMatch, ReferenceTime};
use crate::dataset::{Dataset, EntityDef};
use crate::error::{Error, Result};
use crate::normalize::{normalize, NormalizedText};

pub const MAX_ALTERNATION_VALUES: usize = 10_000;
const REGEX_SIZE_LIMIT: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Element {
    /// Normalized words, possibly including builtin placeholders.
    Words { text: String },
    /// Alternation over every value of a custom entity.
    Custom { entity: String, slot_name: String },
    /// Placeholder for a builtin match of the given kind.
    Builtin {
        entity: String,
        slot_name: String,
        kind: BuiltinKind,
    },
    /// A slot bound to one literal value.
    Value {
        entity: String,
        slot_name: String,
        text: String,
    },
}

impl Element {
    fn slot(&self) -> Option<(&str, &str)> {
        match self {
            Element::Words { .. } => None,
            Element::Custom { entity, slot_name }
            | Element::Builtin {
                entity, slot_name, ..
            }
            | Element::Value {
                entity, slot_name, ..
            } => Some((entity, slot_name)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupBinding {
    pub entity: String,
    pub slot_name: String,
}

#[derive(Debug, Clone)]
pub struct Pattern {
    /// Unanchored regular expression over space-joined normalized tokens.
    pub pattern: String,
    pub groups: BTreeMap<String, GroupBinding>,
    pub elements: Vec<Element>,
    /// Count of literal words; more specific patterns win within an intent.
    pub literal_words: usize,
    regex: Regex,
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern
            && self.groups == other.groups
            && self.elements == other.elements
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PatternFile {
    pattern: String,
    groups: BTreeMap<String, GroupBinding>,
    elements: Vec<Element>,
    literal_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PatternSetFile", try_from = "PatternSetFile")]
pub struct PatternSet {
    pub intents: BTreeMap<String, Vec<Pattern>>,
    /// Normalized values of each custom entity, in alternation order.
    pub entity_values: BTreeMap<String, Vec<String>>,
    /// Builtin kinds whose matches are replaced by placeholders, per intent.
    pub scopes: BTreeMap<String, BTreeSet<BuiltinKind>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PatternSetFile {
    intents: BTreeMap<String, Vec<PatternFile>>,
    entity_values: BTreeMap<String, Vec<String>>,
    scopes: BTreeMap<String, BTreeSet<BuiltinKind>>,
}

impl From<PatternSet> for PatternSetFile {
    fn from(ps: PatternSet) -> Self {
        let intents = ps
            .intents
            .into_iter()
            .map(|(intent, patterns)| {
                let files = patterns
                    .into_iter()
                    .map(|p| PatternFile {
                        pattern: p.pattern,
                        groups: p.groups,
                        elements: p.elements,
                        literal_words: p.literal_words,
                    })
                    .collect();
                (intent, files)
            })
            .collect();
        PatternSetFile {
            intents,
            entity_values: ps.entity_values,
            scopes: ps.scopes,
        }
    }
}

impl TryFrom<PatternSetFile> for PatternSet {
    type Error = Error;

    fn try_from(file: PatternSetFile) -> Result<Self> {
        let mut intents = BTreeMap::new();
        for (intent, files) in file.intents {
            let patterns = files
                .into_iter()
                .map(|f| {
                    Ok(Pattern {
                        regex: compile(&f.pattern)?,
                        pattern: f.pattern,
                        groups: f.groups,
                        elements: f.elements,
                        literal_words: f.literal_words,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            intents.insert(intent, patterns);
        }
        Ok(PatternSet {
            intents,
            entity_values: file.entity_values,
            scopes: file.scopes,
        })
    }
}

fn compile(pattern: &str) -> Result<Regex> {
    RegexBuilder::new(&format!("^(?:{pattern})$"))
        .size_limit(REGEX_SIZE_LIMIT)
        .dfa_size_limit(REGEX_SIZE_LIMIT)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("bad pattern: {e}")))
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn group_name(slot_name: &str, index: usize, used: &BTreeSet<String>) -> String {
    if is_identifier(slot_name) && !used.contains(slot_name) {
        return slot_name.to_string();
    }
    let mut k = index;
    loop {
        let name = format!("g{k}");
        if !used.contains(&name) {
            return name;
        }
        k += 1;
    }
}

fn make_pattern(elements: Vec<Element>, values: &BTreeMap<String, Vec<String>>) -> Result<Pattern> {
    let mut parts = Vec::with_capacity(elements.len());
    let mut groups = BTreeMap::new();
    let mut used = BTreeSet::new();
    let mut literal_words = 0;
    for element in &elements {
        let body = match element {
            Element::Words { text } => {
                literal_words += text.split(' ').count();
                parts.push(regex::escape(text));
                continue;
            }
            Element::Custom { entity, .. } => values
                .get(entity)
                .map(|vs| vs.iter().map(|v| regex::escape(v)).collect::<Vec<_>>().join("|"))
                .unwrap_or_default(),
            Element::Builtin { kind, .. } => regex::escape(&kind.class_token()),
            Element::Value { text, .. } => regex::escape(text),
        };
        let (entity, slot_name) = element.slot().expect("slot element");
        let name = group_name(slot_name, groups.len(), &used);
        used.insert(name.clone());
        groups.insert(
            name.clone(),
            GroupBinding {
                entity: entity.to_string(),
                slot_name: slot_name.to_string(),
            },
        );
        parts.push(format!("(?P<{name}>{body})"));
    }
    let pattern = parts.join(" ");
    Ok(Pattern {
        regex: compile(&pattern)?,
        pattern,
        groups,
        elements,
        literal_words,
    })
}

/// A query rewritten for matching: space-joined items, each mapped back to a
/// range of normalized tokens.
struct View {
    text: String,
    starts: Vec<usize>,
    ends: Vec<usize>,
    ranges: Vec<Range<usize>>,
}

fn view(nt: &NormalizedText, matches: &[BuiltinMatch]) -> View {
    let mut items: Vec<(String, Range<usize>)> = Vec::new();
    let mut next_match = matches.iter().peekable();
    let mut i = 0;
    while i < nt.tokens.len() {
        match next_match.peek() {
            Some(m) if m.tokens.start == i => {
                items.push((m.kind.class_token(), m.tokens.clone()));
                i = m.tokens.end;
                next_match.next();
            }
            _ => {
                items.push((nt.tokens[i].text.clone(), i..i + 1));
                i += 1;
            }
        }
    }
    let mut text = String::new();
    let mut starts = Vec::with_capacity(items.len());
    let mut ends = Vec::with_capacity(items.len());
    let mut ranges = Vec::with_capacity(items.len());
    for (k, (item, range)) in items.into_iter().enumerate() {
        if k > 0 {
            text.push(' ');
        }
        starts.push(text.len());
        text.push_str(&item);
        ends.push(text.len());
        ranges.push(range);
    }
    View {
        text,
        starts,
        ends,
        ranges,
    }
}

/// Elements of a run of literal tokens of a view, merged into one `Words`.
fn push_words(elements: &mut Vec<Element>, word: &str) {
    if let Some(Element::Words { text }) = elements.last_mut() {
        text.push(' ');
        text.push_str(word);
    } else {
        elements.push(Element::Words {
            text: word.to_string(),
        });
    }
}

fn entity_sizes_ok(d: &Dataset, values: &BTreeMap<String, Vec<String>>) -> Result<()> {
    for (entity, vs) in values {
        if vs.len() > MAX_ALTERNATION_VALUES && d.entities.contains_key(entity) {
            return Err(Error::TooManyAlternations {
                entity: entity.clone(),
                count: vs.len(),
                limit: MAX_ALTERNATION_VALUES,
            });
        }
    }
    Ok(())
}

/// Build one literal pattern and, when builtin slots are extracted exactly,
/// one placeholder pattern per training utterance.
pub fn build_patterns(d: &Dataset) -> Result<PatternSet> {
    let entity_values: BTreeMap<String, Vec<String>> = d
        .entities
        .iter()
        .filter(|(_, def)| matches!(def, EntityDef::Custom(_)))
        .map(|(name, _)| (name.clone(), d.entity_values(name)))
        .collect();
    entity_sizes_ok(d, &entity_values)?;
    let builtin_of = |entity: &str| d.entities.get(entity).and_then(EntityDef::builtin_kind);
    // Extraction needs a reference instant but matching does not depend on it.
    let reference = ReferenceTime::parse("2000-01-01T00:00:00+00:00")?;

    let mut ps = PatternSet {
        intents: BTreeMap::new(),
        entity_values,
        scopes: BTreeMap::new(),
    };
    for (intent, def) in &d.intents {
        let scope = d.intent_builtin_kinds(intent);
        let mut patterns: Vec<Pattern> = Vec::new();
        let mut seen = BTreeSet::new();
        for utterance in &def.utterances {
            let aligned = align_utterance(utterance);
            let nt = &aligned.nt;
            let slot_at = |i: usize| aligned.slots.iter().find(|s| s.tokens.start == i);

            let mut literal = Vec::new();
            let mut i = 0;
            while i < nt.len() {
                if let Some(s) = slot_at(i) {
                    let text = nt.tokens[s.tokens.clone()]
                        .iter()
                        .map(|t| t.text.as_str())
                        .collect::<Vec<_>>()
                        .join(" ");
                    literal.push(match builtin_of(&s.entity) {
                        Some(_) => Element::Value {
                            entity: s.entity.clone(),
                            slot_name: s.slot_name.clone(),
                            text,
                        },
                        None => Element::Custom {
                            entity: s.entity.clone(),
                            slot_name: s.slot_name.clone(),
                        },
                    });
                    i = s.tokens.end;
                } else {
                    push_words(&mut literal, &nt.tokens[i].text);
                    i += 1;
                }
            }
            let mut candidates = vec![literal];

            let builtin_slots: Vec<_> = aligned
                .slots
                .iter()
                .filter(|s| builtin_of(&s.entity).is_some())
                .collect();
            if !builtin_slots.is_empty() {
                let matches = extract_builtin(nt, &scope, &reference);
                let exact = builtin_slots.iter().all(|s| {
                    matches
                        .iter()
                        .any(|m| m.tokens == s.tokens && Some(m.kind) == builtin_of(&s.entity))
                });
                let v = view(nt, &matches);
                let aligned_to_view = aligned.slots.iter().all(|s| {
                    v.ranges.iter().any(|r| r.start == s.tokens.start)
                        && v.ranges.iter().any(|r| r.end == s.tokens.end)
                });
                if exact && aligned_to_view {
                    let mut generalized = Vec::new();
                    let mut k = 0;
                    while k < v.ranges.len() {
                        let range = &v.ranges[k];
                        if let Some(s) = slot_at(range.start) {
                            let kind = builtin_of(&s.entity);
                            generalized.push(match kind {
                                Some(kind) => Element::Builtin {
                                    entity: s.entity.clone(),
                                    slot_name: s.slot_name.clone(),
                                    kind,
                                },
                                None => Element::Custom {
                                    entity: s.entity.clone(),
                                    slot_name: s.slot_name.clone(),
                                },
                            });
                            while k < v.ranges.len() && v.ranges[k].start < s.tokens.end {
                                k += 1;
                            }
                        } else {
                            push_words(&mut generalized, &v.text[v.starts[k]..v.ends[k]]);
                            k += 1;
                        }
                    }
                    candidates.push(generalized);
                }
            }

            for elements in candidates {
                let pattern = make_pattern(elements, &ps.entity_values)?;
                if seen.insert(pattern.pattern.clone()) {
                    patterns.push(pattern);
                }
            }
        }
        ps.intents.insert(intent.clone(), patterns);
        ps.scopes.insert(intent.clone(), scope);
    }
    Ok(ps)
}

/// Result of a successful exact match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicParse {
    pub intent: String,
    pub slots: Vec<SlotMatch>,
}

impl Pattern {
    fn apply(&self, nt: &NormalizedText, v: &View) -> Option<Vec<SlotMatch>> {
        let caps = self.regex.captures(&v.text)?;
        let mut slots = Vec::with_capacity(self.groups.len());
        for name in self.regex.capture_names().flatten() {
            let (Some(m), Some(binding)) = (caps.name(name), self.groups.get(name)) else {
                continue;
            };
            let first = v.starts.binary_search(&m.start()).ok()?;
            let last = v.ends.binary_search(&m.end()).ok()?;
            let tokens = v.ranges[first].start..v.ranges[last].end;
            slots.push(SlotMatch::new(nt, tokens, &binding.entity, &binding.slot_name));
        }
        slots.sort_by_key(|s| s.tokens.start);
        Some(slots)
    }
}

impl PatternSet {
    pub fn parse(&self, query: &str, reference: &ReferenceTime) -> Option<DeterministicParse> {
        self.parse_normalized(&normalize(query), reference)
    }

    /// Match against every intent; `None` unless exactly one intent matches.
    pub fn parse_normalized(
        &self,
        nt: &NormalizedText,
        reference: &ReferenceTime,
    ) -> Option<DeterministicParse> {
        let raw = view(nt, &[]);
        let mut placeholder_views: BTreeMap<&BTreeSet<BuiltinKind>, View> = BTreeMap::new();
        let mut found: Option<DeterministicParse> = None;
        for (intent, patterns) in &self.intents {
            let best = |v: &View| {
                patterns
                    .iter()
                    .filter_map(|p| p.apply(nt, v).map(|slots| (p.literal_words, slots)))
                    .fold(None, |acc: Option<(usize, Vec<SlotMatch>)>, cur| match acc {
                        Some(a) if a.0 >= cur.0 => Some(a),
                        _ => Some(cur),
                    })
            };
            let mut hit = best(&raw);
            let scope = &self.scopes[intent];
            if hit.is_none() && !scope.is_empty() {
                let v = placeholder_views
                    .entry(scope)
                    .or_insert_with(|| view(nt, &extract_builtin(nt, scope, reference)));
                hit = best(v);
            }
            if let Some((_, slots)) = hit {
                if found.is_some() {
                    log::debug!("deterministic parser: ambiguous match for '{}'", nt.original);
                    return None;
                }
                found = Some(DeterministicParse {
                    intent: intent.clone(),
                    slots,
                });
            }
        }
        found
    }

    /// Replace the value list of a custom entity and recompile the patterns
    /// that use it.
    pub fn with_entity_values(&self, entity: &str, values: Vec<String>) -> Result<PatternSet> {
        if !self.entity_values.contains_key(entity) {
            return Err(Error::UnknownEntity(entity.to_string()));
        }
        if values.len() > MAX_ALTERNATION_VALUES {
            return Err(Error::TooManyAlternations {
                entity: entity.to_string(),
                count: values.len(),
                limit: MAX_ALTERNATION_VALUES,
            });
        }
        let mut out = self.clone();
        out.entity_values.insert(entity.to_string(), values);
        for patterns in out.intents.values_mut() {
            for p in patterns.iter_mut() {
                let uses = p
                    .elements
                    .iter()
                    .any(|e| matches!(e, Element::Custom { entity: x, .. } if x == entity));
                if uses {
                    *p = make_pattern(p.elements.clone(), &out.entity_values)?;
                }
            }
        }
        Ok(out)
    }

    pub fn pattern_count(&self) -> usize {
        self.intents.values().map(Vec::len).sum()
    }
}

pub fn parse_deterministic(
    ps: &PatternSet,
    query: &str,
    reference: &ReferenceTime,
) -> Option<DeterministicParse> {
    ps.parse(query, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{slot, text, CustomEntity, EntityValue, IntentDef, Utterance};
    use crate::fixtures;

    fn custom(values: &[&str]) -> EntityDef {
        EntityDef::Custom(CustomEntity {
            values: values
                .iter()
                .map(|v| EntityValue {
                    value: v.to_string(),
                    synonyms: vec![],
                })
                .collect(),
            automatically_extensible: false,
        })
    }

    fn lights() -> Dataset {
        let mut d = Dataset {
            language: "en".into(),
            intents: BTreeMap::new(),
            entities: BTreeMap::new(),
        };
        d.entities.insert("room".into(), custom(&["kitchen", "hall", "bedroom"]));
        d.entities.insert("color".into(), custom(&["blue", "yellow", "red"]));
        d.intents.insert(
            "SetLightColor".into(),
            IntentDef {
                utterances: vec![
                    Utterance::from_chunks(vec![
                        text("set the "),
                        slot("kitchen", "room", "room"),
                        text(" lights to "),
                        slot("blue", "color", "color"),
                    ]),
                    Utterance::from_chunks(vec![
                        text("set the "),
                        slot("bedroom", "room", "room"),
                        text(" lights to "),
                        slot("yellow", "color", "color"),
                    ]),
                ],
            },
        );
        d.intents.insert(
            "SwitchOff".into(),
            IntentDef {
                utterances: vec![Utterance::from_chunks(vec![text("lights off!")])],
            },
        );
        d
    }

    fn reference() -> ReferenceTime {
        ReferenceTime::parse("2018-04-18T10:00:00+00:00").unwrap()
    }

    #[test]
    fn builds_named_alternations() {
        let ps = build_patterns(&lights()).unwrap();
        let patterns = &ps.intents["SetLightColor"];
        assert_eq!(patterns.len(), 1);
        assert_eq!(
            patterns[0].pattern,
            "set the (?P<room>kitchen|hall|bedroom) lights to (?P<color>blue|yellow|red)"
        );
        assert_eq!(ps.intents["SwitchOff"][0].pattern, "lights off");
    }

    #[test]
    fn parses_unseen_value_combinations() {
        let ps = build_patterns(&lights()).unwrap();
        let p = ps.parse("Set the hall lights to red", &reference()).unwrap();
        assert_eq!(p.intent, "SetLightColor");
        assert_eq!(p.slots.len(), 2);
        assert_eq!((p.slots[0].raw_value.as_str(), p.slots[0].span.clone()), ("hall", 8..12));
        assert_eq!((p.slots[1].raw_value.as_str(), p.slots[1].span.clone()), ("red", 23..26));
        assert!(ps.parse("turn everything purple", &reference()).is_none());
    }

    #[test]
    fn cross_intent_ambiguity_defers() {
        let mut d = lights();
        d.intents.get_mut("SetLightColor").unwrap().utterances.push(
            Utterance::from_chunks(vec![text("lights off")]),
        );
        let ps = build_patterns(&d).unwrap();
        assert!(ps.parse("lights off", &reference()).is_none());
    }

    #[test]
    fn builtin_slots_match_any_extracted_value() {
        let d = fixtures::smart_lights();
        let ps = build_patterns(&d).unwrap();
        let p = ps
            .parse("set the brightness to 37 in the kitchen", &reference())
            .unwrap();
        assert_eq!(p.intent, "SetLightBrightness");
        let brightness = p.slots.iter().find(|s| s.slot_name == "brightness").unwrap();
        assert_eq!(brightness.raw_value, "37");
        assert_eq!(brightness.span, 22..24);
    }

    #[test]
    fn too_many_values_is_rejected() {
        let mut d = lights();
        let many: Vec<String> = (0..10_001).map(|i| format!("room{i}")).collect();
        let refs: Vec<&str> = many.iter().map(String::as_str).collect();
        d.entities.insert("room".into(), custom(&refs));
        assert!(matches!(
            build_patterns(&d),
            Err(Error::TooManyAlternations { ref entity, count, .. }) if entity == "room" && count > 10_000
        ));
    }

    #[test]
    fn serde_round_trip_recompiles() {
        let ps = build_patterns(&fixtures::smart_lights()).unwrap();
        let json = serde_json::to_string(&ps).unwrap();
        let back: PatternSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ps);
        let q = "switch on the hall lights";
        assert_eq!(back.parse(q, &reference()), ps.parse(q, &reference()));
    }

    #[test]
    fn injected_values_become_matchable() {
        let ps = build_patterns(&lights()).unwrap();
        assert!(ps.parse("set the attic lights to red", &reference()).is_none());
        let mut rooms = ps.entity_values["room"].clone();
        rooms.push("attic".into());
        let ps = ps.with_entity_values("room", rooms).unwrap();
        assert!(ps.parse("set the attic lights to red", &reference()).is_some());
    }

    #[test]
    fn training_utterances_parse_exactly() {
        for (name, d) in [
            ("smart_lights", fixtures::smart_lights()),
            ("thermostat", fixtures::thermostat()),
        ] {
            let ps = build_patterns(&d).unwrap();
            for (intent, def) in &d.intents {
                for u in &def.utterances {
                    let aligned = align_utterance(u);
                    let p = ps
                        .parse_normalized(&aligned.nt, &reference())
                        .unwrap_or_else(|| panic!("{name}: no parse for '{}'", u.text()));
                    assert_eq!(&p.intent, intent, "{}", u.text());
                    assert_eq!(p.slots, aligned.slot_matches(), "{}", u.text());
                }
            }
        }
    }

    #[test]
    fn value_swap_keeps_intent() {
        let d = fixtures::smart_lights();
        let ps = build_patterns(&d).unwrap();
        for room in &ps.entity_values["room"] {
            let q = format!("switch on the {room} lights");
            assert_eq!(ps.parse(&q, &reference()).unwrap().intent, "SwitchLightOn");
        }
    }
}
