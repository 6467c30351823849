//! The NLU engine: deterministic parser, then intent classification and
//! per-intent slot filling, then entity resolution.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_utterance, SlotMatch};
use crate::builtin::{resolve_exact, BuiltinKind, ReferenceTime, ResolvedValue};
use crate::dataset::{validate_dataset, Dataset, EntityDef};
use crate::deterministic::{build_patterns, PatternSet};
use crate::error::{Error, Result};
use crate::lm::{ClassLm, ClassLmConfig};
use crate::normalize::{normalize, NormalizedText};
use crate::prob::clusters::ClusterLexicon;
use crate::prob::crf::{train_slot_filler, CrfTrainingConfig, SlotFillerModel};
use crate::prob::features::{per_kind_builtin_matches, FeatureConfig, FeatureResources, Gazetteer};
use crate::prob::intent::{
    all_builtin_matches, train_intent_classifier, IntentClassifierConfig, IntentClassifierModel,
};

pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Reference instant used while featurizing training data. Only match spans
/// and kinds feed the models, so the choice does not affect them.
pub fn training_reference() -> ReferenceTime {
    ReferenceTime::parse("2018-01-01T00:00:00+00:00").expect("valid constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub features: FeatureConfig,
    pub crf: CrfTrainingConfig,
    pub intent: IntentClassifierConfig,
    pub class_lm: ClassLmConfig,
    /// Intent probabilities below this value yield no intent.
    pub threshold: f64,
    #[serde(skip)]
    pub clusters: Vec<ClusterLexicon>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            features: FeatureConfig::default(),
            crf: CrfTrainingConfig::default(),
            intent: IntentClassifierConfig::default(),
            class_lm: ClassLmConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            clusters: Vec::new(),
        }
    }
}

/// How slot values of an entity are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EntityResolver {
    /// Normalized surface form -> canonical value.
    Custom { synonyms: BTreeMap<String, String> },
    Builtin { kind: BuiltinKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NluEngine {
    pub fingerprint: String,
    pub seed: u64,
    pub config: EngineConfig,
    pub intents: Vec<String>,
    pub patterns: PatternSet,
    /// `None` for single-intent engines.
    pub classifier: Option<IntentClassifierModel>,
    pub slot_fillers: BTreeMap<String, SlotFillerModel>,
    pub resources: FeatureResources,
    pub entities: BTreeMap<String, EntityResolver>,
    pub class_lm: Option<ClassLm>,
    pub training_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentResult {
    #[serde(rename = "intentName")]
    pub intent_name: Option<String>,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CustomKind {
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomValue {
    pub kind: CustomKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotValue {
    Custom(CustomValue),
    Builtin(ResolvedValue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSlot {
    pub entity: String,
    pub slot_name: String,
    #[serde(rename = "rawValue")]
    pub raw_value: String,
    pub value: SlotValue,
    pub range: CharRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub text: String,
    pub intent: IntentResult,
    pub slots: Vec<ParsedSlot>,
}

/// Which stage of the cascade produced a parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParserKind {
    Deterministic,
    Probabilistic,
    Rejected,
}

fn entity_resolvers(d: &Dataset) -> BTreeMap<String, EntityResolver> {
    d.entities
        .iter()
        .map(|(name, def)| {
            let resolver = match def {
                EntityDef::Custom(_) => EntityResolver::Custom {
                    synonyms: d.synonym_table(name),
                },
                EntityDef::Builtin { .. } => EntityResolver::Builtin {
                    kind: def.builtin_kind().expect("validated builtin entity"),
                },
            };
            (name.clone(), resolver)
        })
        .collect()
}

/// Train every component on a validated dataset.
pub fn train_engine(d: &Dataset, cfg: &EngineConfig, seed: u64) -> Result<NluEngine> {
    let violations = validate_dataset(d);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let started = Instant::now();
    let mut cfg = cfg.clone();
    cfg.features.seed = seed;
    let reference = training_reference();
    let patterns = build_patterns(d)?;
    let classifier = match train_intent_classifier(d, &cfg.intent, &reference) {
        Ok(m) => Some(m),
        Err(Error::SingleIntent(_)) => None,
        Err(e) => return Err(e),
    };
    let resources = FeatureResources::from_dataset(d, cfg.clusters.clone());
    let slot_fillers: BTreeMap<String, SlotFillerModel> = d
        .intents
        .par_iter()
        .map(|(intent, def)| {
            let examples: Vec<_> = def
                .utterances
                .iter()
                .map(|u| {
                    let aligned = align_utterance(u);
                    let matches = per_kind_builtin_matches(&aligned.nt, &reference);
                    (aligned, matches)
                })
                .collect();
            let model = train_slot_filler(
                intent,
                d.slot_entities(intent),
                &examples,
                &cfg.features,
                &cfg.crf,
                &resources,
            );
            (intent.clone(), model)
        })
        .collect();
    let class_lm = match ClassLm::from_dataset(d, &cfg.class_lm) {
        Ok(lm) => Some(lm),
        Err(e) => {
            log::warn!("class LM not trained: {e}");
            None
        }
    };
    let engine = NluEngine {
        fingerprint: d.fingerprint(),
        seed,
        intents: d.intents.keys().cloned().collect(),
        patterns,
        classifier,
        slot_fillers,
        resources,
        entities: entity_resolvers(d),
        class_lm,
        training_seconds: started.elapsed().as_secs_f64(),
        config: cfg,
    };
    log::info!(
        "trained engine on {} utterances in {:.2}s",
        d.utterance_count(),
        engine.training_seconds
    );
    Ok(engine)
}

impl NluEngine {
    pub fn parse(&self, query: &str, reference: &ReferenceTime) -> ParseResult {
        self.parse_traced(query, reference).0
    }

    /// Parse and report which stage of the cascade answered.
    pub fn parse_traced(&self, query: &str, reference: &ReferenceTime) -> (ParseResult, ParserKind) {
        let nt = normalize(query);
        if let Some(hit) = self.patterns.parse_normalized(&nt, reference) {
            log::trace!("deterministic parse for '{query}'");
            let slots = self.resolve(&nt, &hit.slots, reference);
            return (self.result(&nt, Some(hit.intent), 1.0, slots), ParserKind::Deterministic);
        }
        log::trace!("probabilistic parse for '{query}'");
        let (intent, probability) = match &self.classifier {
            None => (self.intents[0].clone(), 1.0),
            Some(m) => m
                .classify(&nt, &all_builtin_matches(&nt, reference))
                .into_iter()
                .next()
                .expect("classifier has intents"),
        };
        if probability < self.config.threshold {
            return (self.result(&nt, None, probability, Vec::new()), ParserKind::Rejected);
        }
        let slots = match self.slot_fillers.get(&intent) {
            Some(filler) => {
                let matches = per_kind_builtin_matches(&nt, reference);
                let found = filler.fill_slots(&nt, &matches, &self.config.features, &self.resources);
                self.resolve(&nt, &found, reference)
            }
            None => Vec::new(),
        };
        (self.result(&nt, Some(intent), probability, slots), ParserKind::Probabilistic)
    }

    fn result(
        &self,
        nt: &NormalizedText,
        intent: Option<String>,
        probability: f64,
        slots: Vec<ParsedSlot>,
    ) -> ParseResult {
        ParseResult {
            text: nt.original.clone(),
            intent: IntentResult {
                intent_name: intent,
                probability,
            },
            slots,
        }
    }

    /// Resolve slot values; builtin slots that do not resolve are dropped.
    fn resolve(&self, nt: &NormalizedText, slots: &[SlotMatch], reference: &ReferenceTime) -> Vec<ParsedSlot> {
        let words = nt.texts();
        slots
            .iter()
            .filter_map(|s| {
                let value = match self.entities.get(&s.entity) {
                    Some(EntityResolver::Builtin { kind }) => {
                        SlotValue::Builtin(resolve_exact(*kind, &words[s.tokens.clone()], reference)?)
                    }
                    Some(EntityResolver::Custom { synonyms }) => {
                        let key = words[s.tokens.clone()].join(" ");
                        SlotValue::Custom(CustomValue {
                            kind: CustomKind::Custom,
                            value: synonyms.get(&key).cloned().unwrap_or_else(|| s.raw_value.clone()),
                        })
                    }
                    None => return None,
                };
                Some(ParsedSlot {
                    entity: s.entity.clone(),
                    slot_name: s.slot_name.clone(),
                    raw_value: s.raw_value.clone(),
                    value,
                    range: CharRange {
                        start: s.span.start,
                        end: s.span.end,
                    },
                })
            })
            .collect()
    }

    /// Add values to a custom entity everywhere the engine uses it: the
    /// deterministic patterns, the gazetteer, the resolver and the class LM.
    pub fn inject(&self, entity: &str, values: &[String]) -> Result<NluEngine> {
        let Some(EntityResolver::Custom { synonyms }) = self.entities.get(entity) else {
            return Err(Error::UnknownEntity(entity.to_string()));
        };
        let normalized: Vec<String> = values
            .iter()
            .map(|v| crate::normalize::normalize_string(v))
            .filter(|v| !v.is_empty())
            .collect();
        let mut out = self.clone();
        let mut all = self.patterns.entity_values.get(entity).cloned().unwrap_or_default();
        for v in &normalized {
            if !all.contains(v) {
                all.push(v.clone());
            }
        }
        if self.patterns.entity_values.contains_key(entity) {
            out.patterns = self.patterns.with_entity_values(entity, all.clone())?;
        }
        let extensible = self
            .resources
            .gazetteers
            .get(entity)
            .map(|g| g.automatically_extensible)
            .unwrap_or(true);
        out.resources
            .gazetteers
            .insert(entity.to_string(), Gazetteer::new(all, extensible));
        let mut synonyms = synonyms.clone();
        for (raw, norm) in values.iter().zip(values.iter().map(|v| crate::normalize::normalize_string(v))) {
            if !norm.is_empty() {
                synonyms.entry(norm).or_insert_with(|| raw.trim().to_string());
            }
        }
        out.entities
            .insert(entity.to_string(), EntityResolver::Custom { synonyms });
        if let Some(lm) = &self.class_lm {
            if lm.entity_models.contains_key(entity) {
                out.class_lm = Some(lm.inject(entity, values)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn reference() -> ReferenceTime {
        ReferenceTime::parse("2018-04-18T10:00:00+00:00").unwrap()
    }

    #[test]
    fn thermostat_query_with_temperature_and_room() {
        let e = train_engine(&fixtures::thermostat(), &EngineConfig::default(), 42).unwrap();
        let r = e.parse("Set the temperature to 23°C in the living room", &reference());
        assert_eq!(r.intent.intent_name.as_deref(), Some("SetTemperature"));
        assert!(r.intent.probability > 0.0 && r.intent.probability <= 1.0);
        let room = r.slots.iter().find(|s| s.slot_name == "room").unwrap();
        assert_eq!(
            room.value,
            SlotValue::Custom(CustomValue {
                kind: CustomKind::Custom,
                value: "living room".into()
            })
        );
        let t = r.slots.iter().find(|s| s.entity == "snips/temperature").unwrap();
        assert_eq!(
            t.value,
            SlotValue::Builtin(ResolvedValue::Temperature {
                value: 23.0,
                unit: crate::builtin::TemperatureUnit::Celsius
            })
        );
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["intent"]["intentName"], "SetTemperature");
        assert_eq!(json["slots"][0]["value"]["kind"].as_str().is_some(), true);
    }

    #[test]
    fn cascade_and_rejection() {
        let e = train_engine(&fixtures::smart_lights(), &EngineConfig::default(), 42).unwrap();
        let (r, kind) = e.parse_traced("zzq qqz", &reference());
        assert_eq!(kind, ParserKind::Rejected);
        assert_eq!(r.intent.intent_name, None);
        assert!(r.slots.is_empty());
        let d = fixtures::smart_lights();
        let u = &d.intents["SetLightColor"].utterances[0];
        let (r, kind) = e.parse_traced(&u.text(), &reference());
        assert_eq!(kind, ParserKind::Deterministic);
        assert_eq!(r.intent.probability, 1.0);
        let (r, kind) = e.parse_traced("could you please set the kitchen lights to blue now", &reference());
        assert_eq!(kind, ParserKind::Probabilistic);
        assert_eq!(r.intent.intent_name.as_deref(), Some("SetLightColor"));
    }

    #[test]
    fn synonyms_resolve_to_canonical() {
        let e = train_engine(&fixtures::smart_lights(), &EngineConfig::default(), 42).unwrap();
        let r = e.parse("turn on the lights in the lounge", &reference());
        if let Some(s) = r.slots.iter().find(|s| s.slot_name == "room") {
            assert_eq!(s.raw_value, "lounge");
            assert_eq!(
                s.value,
                SlotValue::Custom(CustomValue {
                    kind: CustomKind::Custom,
                    value: "living room".into()
                })
            );
        } else {
            panic!("no room slot in {r:?}");
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut d = fixtures::smart_lights();
        d.intents.clear();
        assert!(matches!(train_engine(&d, &EngineConfig::default(), 1), Err(Error::Validation(_))));
    }

    #[test]
    fn single_intent_routes_everything() {
        let mut d = fixtures::smart_lights();
        d.intents.retain(|k, _| k == "SetLightColor");
        let e = train_engine(&d, &EngineConfig::default(), 1).unwrap();
        assert!(e.classifier.is_none());
        let r = e.parse("make everything purple please", &reference());
        assert_eq!(r.intent.intent_name.as_deref(), Some("SetLightColor"));
    }

    #[test]
    fn injection_reaches_patterns() {
        let e = train_engine(&fixtures::smart_lights(), &EngineConfig::default(), 42).unwrap();
        let d = fixtures::smart_lights();
        let u = d.intents["SwitchLightOn"]
            .utterances
            .iter()
            .find(|u| u.slots().len() == 1 && u.slots()[0].entity == "room")
            .unwrap();
        let slot = &u.slots()[0];
        let query = u.text().replacen(slot.text, "conservatory", 1);
        let e2 = e.inject("room", &["Conservatory".to_string()]).unwrap();
        let (r, kind) = e2.parse_traced(&query, &reference());
        assert_eq!(kind, ParserKind::Deterministic);
        assert_eq!(r.slots[0].raw_value, "conservatory");
        assert!(e.inject("snips/number", &["x".into()]).is_err());
    }
}
