//! Assistant dataset: intents with slot-annotated utterances plus custom and
//! built-in entity definitions. The same dataset trains the language model
//! and the NLU engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::builtin::BuiltinKind;
use crate::error::{Error, Result};
use crate::normalize::normalize_string;

pub const MAX_INTENTS: usize = 256;
pub const MAX_UTTERANCES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub language: String,
    pub intents: BTreeMap<String, IntentDef>,
    pub entities: BTreeMap<String, EntityDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntentDef {
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Utterance {
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chunk {
    Text {
        text: String,
    },
    Slot {
        text: String,
        entity: String,
        slot_name: String,
    },
}

impl Chunk {
    pub fn text(&self) -> &str {
        match self {
            Chunk::Text { text } | Chunk::Slot { text, .. } => text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntityDef {
    Custom(CustomEntity),
    Builtin { kind: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CustomEntity {
    pub values: Vec<EntityValue>,
    pub automatically_extensible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityValue {
    pub value: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl EntityDef {
    pub fn builtin_kind(&self) -> Option<BuiltinKind> {
        match self {
            EntityDef::Builtin { kind } => BuiltinKind::from_identifier(kind),
            EntityDef::Custom(_) => None,
        }
    }

    pub fn as_custom(&self) -> Option<&CustomEntity> {
        match self {
            EntityDef::Custom(c) => Some(c),
            EntityDef::Builtin { .. } => None,
        }
    }
}

impl CustomEntity {
    /// Every surface form (values and their synonyms) with the canonical
    /// value it resolves to.
    pub fn surface_forms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().flat_map(|v| {
            std::iter::once((v.value.as_str(), v.value.as_str()))
                .chain(v.synonyms.iter().map(move |s| (s.as_str(), v.value.as_str())))
        })
    }
}

/// A slot occurrence inside an utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSlot<'a> {
    /// Character range of the slot text with surrounding whitespace trimmed.
    pub span: Range<usize>,
    pub text: &'a str,
    pub entity: &'a str,
    pub slot_name: &'a str,
}

impl Utterance {
    pub fn text(&self) -> String {
        self.chunks.iter().map(Chunk::text).collect()
    }

    pub fn from_chunks(chunks: Vec<Chunk>) -> Self {
        Utterance { chunks }
    }

    pub fn slots(&self) -> Vec<AnnotatedSlot<'_>> {
        let mut offset = 0;
        let mut slots = Vec::new();
        for chunk in &self.chunks {
            let len = chunk.text().chars().count();
            if let Chunk::Slot {
                text,
                entity,
                slot_name,
            } = chunk
            {
                let leading = text.chars().take_while(|c| c.is_whitespace()).count();
                let trimmed = text.trim();
                let start = offset + leading;
                slots.push(AnnotatedSlot {
                    span: start..start + trimmed.chars().count(),
                    text: trimmed,
                    entity,
                    slot_name,
                });
            }
            offset += len;
        }
        slots
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationCode {
    UnsupportedLanguage,
    NoIntents,
    TooManyIntents,
    TooManyUtterances,
    InvalidIntentName,
    EmptyIntent,
    UnknownEntity,
    EmptySlotText,
    EmptySlotName,
    DuplicateValue,
    UnsupportedBuiltin,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, message: impl Into<String>) -> Self {
        Violation {
            code,
            message: message.into(),
        }
    }
}

fn valid_intent_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// All invariant violations of `d`, in a deterministic order.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    if d.language != "en" {
        out.push(Violation::new(
            UnsupportedLanguage,
            format!("language '{}' is not supported (only 'en')", d.language),
        ));
    }
    if d.intents.is_empty() {
        out.push(Violation::new(NoIntents, "no intents"));
    }
    if d.intents.len() > MAX_INTENTS {
        out.push(Violation::new(
            TooManyIntents,
            format!("{} intents exceed the limit of {MAX_INTENTS}", d.intents.len()),
        ));
    }
    let total: usize = d.intents.values().map(|i| i.utterances.len()).sum();
    if total > MAX_UTTERANCES {
        out.push(Violation::new(
            TooManyUtterances,
            format!("{total} utterances exceed the limit of {MAX_UTTERANCES}"),
        ));
    }
    for (name, intent) in &d.intents {
        if !valid_intent_name(name) {
            out.push(Violation::new(
                InvalidIntentName,
                format!("intent name '{name}' must match [A-Za-z][A-Za-z0-9_]*"),
            ));
        }
        if intent.utterances.is_empty() {
            out.push(Violation::new(
                EmptyIntent,
                format!("intent '{name}' has no utterances"),
            ));
        }
        for (idx, utterance) in intent.utterances.iter().enumerate() {
            for chunk in &utterance.chunks {
                let Chunk::Slot {
                    text,
                    entity,
                    slot_name,
                } = chunk
                else {
                    continue;
                };
                if text.trim().is_empty() {
                    out.push(Violation::new(
                        EmptySlotText,
                        format!("intent '{name}' utterance {idx}: slot '{slot_name}' has empty text"),
                    ));
                }
                if slot_name.is_empty() {
                    out.push(Violation::new(
                        EmptySlotName,
                        format!("intent '{name}' utterance {idx}: slot for entity '{entity}' has no name"),
                    ));
                }
                if !d.entities.contains_key(entity) {
                    out.push(Violation::new(
                        UnknownEntity,
                        format!("intent '{name}' utterance {idx} references undeclared entity '{entity}'"),
                    ));
                }
            }
        }
    }
    for (name, entity) in &d.entities {
        match entity {
            EntityDef::Builtin { kind } => {
                if BuiltinKind::from_identifier(kind).is_none() {
                    out.push(Violation::new(
                        UnsupportedBuiltin,
                        format!("entity '{name}' uses unsupported builtin '{kind}'"),
                    ));
                }
            }
            EntityDef::Custom(custom) => {
                let mut seen: HashMap<String, &str> = HashMap::new();
                for (surface, _) in custom.surface_forms() {
                    let key = normalize_string(surface);
                    if let Some(previous) = seen.get(&key) {
                        out.push(Violation::new(
                            DuplicateValue,
                            format!(
                                "entity '{name}': '{surface}' and '{previous}' normalize to the same value '{key}'"
                            ),
                        ));
                    } else {
                        seen.insert(key, surface);
                    }
                }
            }
        }
    }
    out
}

/// Union of normalized tokens from every utterance and every custom entity
/// value (synonyms included).
pub fn dataset_vocabulary(d: &Dataset) -> BTreeSet<String> {
    let mut vocab = BTreeSet::new();
    let mut add = |text: &str| {
        for word in normalize_string(text).split_whitespace() {
            vocab.insert(word.to_string());
        }
    };
    for intent in d.intents.values() {
        for utterance in &intent.utterances {
            add(&utterance.text());
        }
    }
    for entity in d.entities.values() {
        if let EntityDef::Custom(custom) = entity {
            for (surface, _) in custom.surface_forms() {
                add(surface);
            }
        }
    }
    vocab
}

impl Dataset {
    pub fn utterance_count(&self) -> usize {
        self.intents.values().map(|i| i.utterances.len()).sum()
    }

    /// Slot name -> entity name for each intent, in first-seen order.
    pub fn slot_entities(&self, intent: &str) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        if let Some(def) = self.intents.get(intent) {
            for utterance in &def.utterances {
                for slot in utterance.slots() {
                    out.entry(slot.slot_name.to_string())
                        .or_insert_with(|| slot.entity.to_string());
                }
            }
        }
        out
    }

    /// Normalized values of a custom entity: declared values and synonyms
    /// first, then slot texts seen in utterances; deduplicated in order.
    pub fn entity_values(&self, entity: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut push = |text: &str| {
            let norm = normalize_string(text);
            if !norm.is_empty() && seen.insert(norm.clone()) {
                out.push(norm);
            }
        };
        if let Some(EntityDef::Custom(custom)) = self.entities.get(entity) {
            for (surface, _) in custom.surface_forms() {
                push(surface);
            }
        }
        for intent in self.intents.values() {
            for utterance in &intent.utterances {
                for slot in utterance.slots() {
                    if slot.entity == entity {
                        push(slot.text);
                    }
                }
            }
        }
        out
    }

    /// Normalized surface form -> canonical value for a custom entity.
    pub fn synonym_table(&self, entity: &str) -> BTreeMap<String, String> {
        let mut table = BTreeMap::new();
        if let Some(EntityDef::Custom(custom)) = self.entities.get(entity) {
            for (surface, canonical) in custom.surface_forms() {
                table
                    .entry(normalize_string(surface))
                    .or_insert_with(|| canonical.to_string());
            }
        }
        table
    }

    /// Builtin kinds referenced by an intent's slots.
    pub fn intent_builtin_kinds(&self, intent: &str) -> BTreeSet<BuiltinKind> {
        self.slot_entities(intent)
            .values()
            .filter_map(|e| self.entities.get(e).and_then(EntityDef::builtin_kind))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&DatasetFile::from(self)).expect("dataset serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&DatasetFile::from(self)).expect("dataset serializes")
    }

    /// Parse and validate a dataset document. Unknown keys are rejected
    /// unless `lenient` is set.
    pub fn from_json_str(text: &str, lenient: bool) -> Result<Dataset> {
        let mut ignored = Vec::new();
        let mut de = serde_json::Deserializer::from_str(text);
        let file: DatasetFile = serde_ignored::deserialize(&mut de, |path| {
            ignored.push(path.to_string())
        })
        .map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        de.end().map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        if !lenient {
            if let Some(path) = ignored.first() {
                let key = path.rsplit('.').next().unwrap_or(path);
                return Err(Error::Format {
                    line: line_of(text, key),
                    message: format!("unknown key '{path}'"),
                });
            }
        }
        let dataset = file.into_dataset(text)?;
        let violations = validate_dataset(&dataset);
        if violations.is_empty() {
            Ok(dataset)
        } else {
            Err(Error::Validation(violations))
        }
    }
}

fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.find(&needle)
        .map(|pos| text[..pos].matches('\n').count() + 1)
        .unwrap_or(1)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with(path, false)
}

pub fn load_dataset_with(path: impl AsRef<Path>, lenient: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    Dataset::from_json_str(&text, lenient)
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, d.to_json_pretty() + "\n")?;
    Ok(())
}

// ---- file format ----

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    language: String,
    intents: BTreeMap<String, IntentFile>,
    entities: BTreeMap<String, EntityFile>,
}

#[derive(Serialize, Deserialize)]
struct IntentFile {
    utterances: Vec<UtteranceFile>,
}

#[derive(Serialize, Deserialize)]
struct UtteranceFile {
    data: Vec<ChunkFile>,
}

#[derive(Serialize, Deserialize)]
struct ChunkFile {
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    entity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slot_name: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EntityFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<EntityValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    automatically_extensible: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    builtin: Option<String>,
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        let intents = d
            .intents
            .iter()
            .map(|(name, intent)| {
                let utterances = intent
                    .utterances
                    .iter()
                    .map(|u| UtteranceFile {
                        data: u
                            .chunks
                            .iter()
                            .map(|c| match c {
                                Chunk::Text { text } => ChunkFile {
                                    text: text.clone(),
                                    entity: None,
                                    slot_name: None,
                                },
                                Chunk::Slot {
                                    text,
                                    entity,
                                    slot_name,
                                } => ChunkFile {
                                    text: text.clone(),
                                    entity: Some(entity.clone()),
                                    slot_name: Some(slot_name.clone()),
                                },
                            })
                            .collect(),
                    })
                    .collect();
                (name.clone(), IntentFile { utterances })
            })
            .collect();
        let entities = d
            .entities
            .iter()
            .map(|(name, e)| {
                let file = match e {
                    EntityDef::Custom(c) => EntityFile {
                        values: Some(c.values.clone()),
                        automatically_extensible: Some(c.automatically_extensible),
                        builtin: None,
                    },
                    EntityDef::Builtin { kind } => EntityFile {
                        values: None,
                        automatically_extensible: None,
                        builtin: Some(kind.clone()),
                    },
                };
                (name.clone(), file)
            })
            .collect();
        DatasetFile {
            language: d.language.clone(),
            intents,
            entities,
        }
    }
}

impl DatasetFile {
    fn into_dataset(self, source: &str) -> Result<Dataset> {
        let mut intents = BTreeMap::new();
        for (name, intent) in self.intents {
            let mut utterances = Vec::with_capacity(intent.utterances.len());
            for u in intent.utterances {
                let mut chunks = Vec::with_capacity(u.data.len());
                for c in u.data {
                    let chunk = match (c.entity, c.slot_name) {
                        (None, None) => Chunk::Text { text: c.text },
                        (Some(entity), Some(slot_name)) => Chunk::Slot {
                            text: c.text,
                            entity,
                            slot_name,
                        },
                        (Some(entity), None) => {
                            return Err(Error::Format {
                                line: line_of(source, &c.text),
                                message: format!(
                                    "chunk '{}' of intent '{name}' has entity '{entity}' but no slot_name",
                                    c.text
                                ),
                            })
                        }
                        (None, Some(slot)) => {
                            return Err(Error::Format {
                                line: line_of(source, &c.text),
                                message: format!(
                                    "chunk '{}' of intent '{name}' has slot_name '{slot}' but no entity",
                                    c.text
                                ),
                            })
                        }
                    };
                    chunks.push(chunk);
                }
                utterances.push(Utterance { chunks });
            }
            intents.insert(name, IntentDef { utterances });
        }
        let mut entities = BTreeMap::new();
        for (name, e) in self.entities {
            let def = match (e.builtin, e.values) {
                (Some(kind), None) if e.automatically_extensible.is_none() => {
                    EntityDef::Builtin { kind }
                }
                (None, Some(values)) => EntityDef::Custom(CustomEntity {
                    values,
                    automatically_extensible: e.automatically_extensible.unwrap_or(false),
                }),
                (None, None) => EntityDef::Custom(CustomEntity {
                    values: Vec::new(),
                    automatically_extensible: e.automatically_extensible.unwrap_or(true),
                }),
                _ => {
                    return Err(Error::Format {
                        line: line_of(source, &name),
                        message: format!(
                            "entity '{name}' must be either builtin or custom, not both"
                        ),
                    })
                }
            };
            entities.insert(name, def);
        }
        Ok(Dataset {
            language: self.language,
            intents,
            entities,
        })
    }
}

/// Plain text chunk.
pub fn text(t: &str) -> Chunk {
    Chunk::Text { text: t.into() }
}

/// Slot chunk bound to `entity`.
pub fn slot(t: &str, entity: &str, slot_name: &str) -> Chunk {
    Chunk::Slot {
        text: t.into(),
        entity: entity.into(),
        slot_name: slot_name.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn toy() -> Dataset {
        let mut intents = BTreeMap::new();
        intents.insert(
            "PlayMusic".to_string(),
            IntentDef {
                utterances: vec![Utterance::from_chunks(vec![
                    text("play "),
                    slot("the beatles", "artist", "artist"),
                ])],
            },
        );
        let mut entities = BTreeMap::new();
        entities.insert(
            "artist".to_string(),
            EntityDef::Custom(CustomEntity {
                values: vec![EntityValue {
                    value: "the beatles".into(),
                    synonyms: vec![],
                }],
                automatically_extensible: false,
            }),
        );
        Dataset {
            language: "en".into(),
            intents,
            entities,
        }
    }

    #[test]
    fn smart_lights_fixture_loads() {
        let d = fixtures::smart_lights();
        assert_eq!(d.intents.len(), 6);
        let names: BTreeSet<_> = d.entities.keys().map(String::as_str).collect();
        assert_eq!(names, BTreeSet::from(["brightness", "color", "room"]));
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn undeclared_entity_is_reported() {
        let doc = r#"{"language":"en","intents":{"SetLightColor":{"utterances":[{"data":[
            {"text":"make it "},{"text":"blue","entity":"colour","slot_name":"color"}]}]}},
            "entities":{}}"#;
        match Dataset::from_json_str(doc, false) {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].code, ViolationCode::UnknownEntity);
                assert!(v[0].message.contains("SetLightColor"));
                assert!(v[0].message.contains("colour"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_intents_is_reported() {
        let doc = r#"{"language":"en","intents":{},"entities":{}}"#;
        match Dataset::from_json_str(doc, false) {
            Err(Error::Validation(v)) => {
                assert_eq!(v[0].code, ViolationCode::NoIntents);
                assert_eq!(v[0].message, "no intents");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected_unless_lenient() {
        let doc = "{\"language\":\"en\",\n\"colour\":1,\n\"intents\":{\"A\":{\"utterances\":[{\"data\":[{\"text\":\"hi\"}]}]}},\"entities\":{}}";
        match Dataset::from_json_str(doc, false) {
            Err(Error::Format { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("colour"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(Dataset::from_json_str(doc, true).is_ok());
    }

    #[test]
    fn syntax_error_reports_line() {
        let doc = "{\"language\":\"en\",\n\"intents\": {,}}";
        match Dataset::from_json_str(doc, false) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn empty_slot_text() {
        let mut d = toy();
        d.intents.get_mut("PlayMusic").unwrap().utterances[0]
            .chunks
            .push(slot("", "artist", "artist"));
        let v = validate_dataset(&d);
        assert_eq!(
            v.iter().map(|v| v.code).collect::<Vec<_>>(),
            vec![ViolationCode::EmptySlotText]
        );
    }

    #[test]
    fn duplicate_values_after_normalization() {
        let mut d = toy();
        if let Some(EntityDef::Custom(c)) = d.entities.get_mut("artist") {
            c.values.push(EntityValue {
                value: "The  Beatles!".into(),
                synonyms: vec![],
            });
        }
        assert_eq!(normalize_string("The  Beatles!"), normalize_string("the beatles"));
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code, ViolationCode::DuplicateValue);
    }

    #[test]
    fn validation_is_pure() {
        let mut d = toy();
        d.language = "fr".into();
        d.intents.insert("bad name".into(), IntentDef::default());
        let first = validate_dataset(&d);
        assert_eq!(first, validate_dataset(&d));
        assert_eq!(first.len(), 3);
    }

    #[test]
    fn vocabulary() {
        let d = toy();
        let vocab: Vec<_> = dataset_vocabulary(&d).into_iter().collect();
        assert_eq!(vocab, vec!["beatles", "play", "the"]);

        let mut d = toy();
        if let Some(EntityDef::Custom(c)) = d.entities.get_mut("artist") {
            c.values.push(EntityValue {
                value: "The Rolling Stones".into(),
                synonyms: vec![],
            });
        }
        d.entities
            .insert("empty".into(), EntityDef::Custom(CustomEntity::default()));
        let vocab: Vec<_> = dataset_vocabulary(&d).into_iter().collect();
        assert_eq!(vocab, vec!["beatles", "play", "rolling", "stones", "the"]);
    }

    #[test]
    fn utterance_reconstruction_and_slot_spans() {
        let u = Utterance::from_chunks(vec![
            text("set the "),
            slot("kitchen", "room", "room"),
            text(" lights to "),
            slot(" blue", "color", "color"),
        ]);
        assert_eq!(u.text(), "set the kitchen lights to  blue");
        let slots = u.slots();
        assert_eq!(slots[0].span, 8..15);
        assert_eq!(slots[1].span, 27..31);
        assert_eq!(slots[1].text, "blue");
    }

    #[test]
    fn round_trip_through_file() {
        let d = fixtures::smart_lights();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        write_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = toy();
        let mut b = toy();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.language = "de".into();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
