use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Serialize, Serializer};
use unicode_normalization::UnicodeNormalization;

use super::{assign_folds, cross_validate, derive_seed, EvalConfig, Prediction};
use crate::align::align_utterance;
use crate::dataset::{validate_dataset, Chunk, Dataset, EntityDef, IntentDef, Utterance};
use crate::engine::{CharRange, ParsedSlot};
use crate::error::{Error, Result};
use crate::normalize::normalize_string;

pub const DEFAULT_REPETITIONS: usize = 5;
pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict")]
pub enum Verdict {
    Keep,
    FixIntent {
        intent: String,
    },
    ExtendSlot {
        entity: String,
        slot_name: String,
        from: CharRange,
        to: CharRange,
    },
    AddSlot {
        entity: String,
        slot_name: String,
        range: CharRange,
        text: String,
    },
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceReport {
    pub intent: String,
    pub index: usize,
    pub text: String,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisambiguationReport {
    pub seed: u64,
    pub repetitions: usize,
    pub folds: usize,
    pub utterances: Vec<UtteranceReport>,
    #[serde(serialize_with = "dataset_json")]
    pub corrected: Dataset,
}

fn dataset_json<S: Serializer>(d: &Dataset, s: S) -> std::result::Result<S::Ok, S::Error> {
    let value: serde_json::Value =
        serde_json::from_str(&d.to_json_pretty()).map_err(serde::ser::Error::custom)?;
    value.serialize(s)
}

impl DisambiguationReport {
    /// Reports that carry at least one verdict other than `Keep`.
    pub fn changes(&self) -> impl Iterator<Item = &UtteranceReport> {
        self.utterances
            .iter()
            .filter(|u| u.verdicts.iter().any(|v| *v != Verdict::Keep))
    }
}

fn range(r: &CharRange) -> Range<usize> {
    r.start..r.end
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

fn chars_of(text: &str, r: &Range<usize>) -> String {
    text.chars().skip(r.start).take(r.len()).collect()
}

/// Whether a predicted slot value is anchored in the dataset: a known value
/// of a custom entity, or any resolved builtin value.
fn value_anchored(d: &Dataset, slot: &ParsedSlot, text: &str) -> bool {
    match d.entities.get(&slot.entity) {
        Some(EntityDef::Builtin { .. }) => true,
        Some(EntityDef::Custom(_)) => {
            let norm = normalize_string(&chars_of(text, &range(&slot.range)));
            d.entity_values(&slot.entity).contains(&norm)
        }
        None => false,
    }
}

struct Votes<'a> {
    intents: BTreeMap<Option<&'a str>, usize>,
    slots: BTreeMap<(usize, usize, &'a str, &'a str), (usize, &'a ParsedSlot)>,
}

fn collect_votes<'a>(passes: &[&'a Prediction]) -> Votes<'a> {
    let mut votes = Votes {
        intents: BTreeMap::new(),
        slots: BTreeMap::new(),
    };
    for p in passes {
        *votes.intents.entry(p.result.intent.intent_name.as_deref()).or_default() += 1;
        for s in &p.result.slots {
            votes
                .slots
                .entry((s.range.start, s.range.end, s.entity.as_str(), s.slot_name.as_str()))
                .or_insert((0, s))
                .0 += 1;
        }
    }
    votes
}

fn judge(
    d: &Dataset,
    intent: &str,
    utterance: &Utterance,
    passes: &[&Prediction],
    warnings: &mut Vec<String>,
) -> Vec<Verdict> {
    let majority = passes.len() / 2 + 1;
    let votes = collect_votes(passes);
    let mut verdicts = Vec::new();
    match votes.intents.iter().find(|(_, &n)| n >= majority) {
        None => warnings.push("no majority intent".into()),
        Some((None, _)) => return vec![Verdict::Drop],
        Some((Some(winner), _)) if *winner != intent => {
            let target = d.slot_entities(winner);
            let compatible = d.slot_entities(intent).iter().all(|(name, entity)| {
                utterance.slots().iter().all(|s| s.slot_name != name) || target.get(name).map_or(true, |e| e == entity)
            });
            if compatible {
                verdicts.push(Verdict::FixIntent {
                    intent: winner.to_string(),
                });
            } else {
                warnings.push(format!("slots conflict with intent {winner}; intent kept"));
            }
        }
        Some(_) => {}
    }
    let text = utterance.text();
    if text.nfc().collect::<String>() != text {
        warnings.push("text is not NFC; slot edits skipped".into());
        return if verdicts.is_empty() { vec![Verdict::Keep] } else { verdicts };
    }
    let gold = align_utterance(utterance).slots;
    let annotated: Vec<Range<usize>> = utterance.slots().iter().map(|s| s.span.clone()).collect();
    let mut added: Vec<Range<usize>> = Vec::new();
    let mut winners: Vec<(usize, &ParsedSlot)> = votes
        .slots
        .values()
        .filter(|(n, _)| *n >= majority)
        .copied()
        .collect();
    winners.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.range.start.cmp(&b.1.range.start)));
    for (_, slot) in winners {
        let r = range(&slot.range);
        if gold.iter().any(|g| g.entity == slot.entity && g.span == r) {
            continue;
        }
        let inner: Vec<_> = gold.iter().filter(|g| overlaps(&g.span, &r)).collect();
        if let [g] = inner.as_slice() {
            let strictly_contains = r.start <= g.span.start && g.span.end <= r.end && r != g.span;
            if strictly_contains && g.entity == slot.entity && !added.iter().any(|a| overlaps(a, &r)) {
                verdicts.push(Verdict::ExtendSlot {
                    entity: slot.entity.clone(),
                    slot_name: g.slot_name.clone(),
                    from: CharRange {
                        start: g.span.start,
                        end: g.span.end,
                    },
                    to: slot.range,
                });
                added.push(r);
            }
            continue;
        }
        if inner.is_empty()
            && !annotated.iter().chain(&added).any(|a| overlaps(a, &r))
            && value_anchored(d, slot, &text)
        {
            verdicts.push(Verdict::AddSlot {
                entity: slot.entity.clone(),
                slot_name: slot.slot_name.clone(),
                range: slot.range,
                text: chars_of(&text, &r),
            });
            added.push(r);
        }
    }
    if verdicts.is_empty() {
        verdicts.push(Verdict::Keep);
    }
    verdicts
}

/// Rebuild an utterance with its annotations edited by `verdicts`.
fn apply_slot_edits(utterance: &Utterance, verdicts: &[Verdict]) -> Utterance {
    let text = utterance.text();
    let mut slots: Vec<(Range<usize>, String, String)> = utterance
        .slots()
        .iter()
        .map(|s| (s.span.clone(), s.entity.to_string(), s.slot_name.to_string()))
        .collect();
    for v in verdicts {
        match v {
            Verdict::ExtendSlot {
                entity, slot_name, to, ..
            } => {
                let r = range(to);
                slots.retain(|(s, _, _)| !overlaps(s, &r));
                slots.push((r, entity.clone(), slot_name.clone()));
            }
            Verdict::AddSlot {
                entity, slot_name, range: r, ..
            } => slots.push((range(r), entity.clone(), slot_name.clone())),
            _ => {}
        }
    }
    if slots.len() == utterance.slots().len() && !verdicts.iter().any(|v| matches!(v, Verdict::ExtendSlot { .. })) {
        return utterance.clone();
    }
    slots.sort_by_key(|(r, _, _)| r.start);
    let chars: Vec<char> = text.chars().collect();
    let mut chunks = Vec::new();
    let mut at = 0;
    for (r, entity, slot_name) in slots {
        if r.start > at {
            chunks.push(Chunk::Text {
                text: chars[at..r.start].iter().collect(),
            });
        }
        chunks.push(Chunk::Slot {
            text: chars[r.clone()].iter().collect(),
            entity,
            slot_name,
        });
        at = r.end;
    }
    if at < chars.len() {
        chunks.push(Chunk::Text {
            text: chars[at..].iter().collect(),
        });
    }
    Utterance::from_chunks(chunks)
}

/// Repeated seeded k-fold cross-validation with majority voting over the
/// held-out predictions of each utterance.
pub fn disambiguate(
    d: &Dataset,
    repetitions: usize,
    folds: usize,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<DisambiguationReport> {
    if repetitions < 3 || repetitions % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "repetitions must be odd and at least 3, got {repetitions}"
        )));
    }
    let mut runs: Vec<Vec<Prediction>> = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let pass_seed = derive_seed(seed, r as u64);
        let assignments = assign_folds(d, folds, pass_seed)?;
        runs.push(cross_validate(d, &assignments, folds, pass_seed, cfg)?);
        log::info!("disambiguation pass {}/{repetitions} done", r + 1);
    }
    let mut by_utterance: BTreeMap<(&str, usize), Vec<&Prediction>> = BTreeMap::new();
    for p in runs.iter().flatten() {
        by_utterance.entry((p.intent.as_str(), p.index)).or_default().push(p);
    }
    let mut reports = Vec::new();
    for (intent, def) in &d.intents {
        for (index, utterance) in def.utterances.iter().enumerate() {
            let mut warnings = Vec::new();
            let passes = &by_utterance[&(intent.as_str(), index)];
            let verdicts = judge(d, intent, utterance, passes, &mut warnings);
            for w in &warnings {
                log::warn!("{intent}[{index}] '{}': {w}", utterance.text());
            }
            reports.push(UtteranceReport {
                intent: intent.clone(),
                index,
                text: utterance.text(),
                verdicts,
                warnings,
            });
        }
    }
    // Never empty an intent by moving or dropping all of its utterances.
    for (intent, def) in &d.intents {
        let leaving = reports
            .iter()
            .filter(|r| &r.intent == intent)
            .filter(|r| r.verdicts.iter().any(|v| matches!(v, Verdict::Drop | Verdict::FixIntent { .. })))
            .count();
        if leaving == def.utterances.len() {
            for r in reports.iter_mut().filter(|r| &r.intent == intent) {
                r.verdicts.retain(|v| !matches!(v, Verdict::Drop | Verdict::FixIntent { .. }));
                if r.verdicts.is_empty() {
                    r.verdicts.push(Verdict::Keep);
                }
                r.warnings.push("intent would become empty; kept".into());
            }
        }
    }
    let mut intents: BTreeMap<String, IntentDef> =
        d.intents.keys().map(|k| (k.clone(), IntentDef::default())).collect();
    for r in &reports {
        if r.verdicts.contains(&Verdict::Drop) {
            continue;
        }
        let target = r
            .verdicts
            .iter()
            .find_map(|v| match v {
                Verdict::FixIntent { intent } => Some(intent.clone()),
                _ => None,
            })
            .unwrap_or_else(|| r.intent.clone());
        let edited = apply_slot_edits(&d.intents[&r.intent].utterances[r.index], &r.verdicts);
        intents.get_mut(&target).expect("known intent").utterances.push(edited);
    }
    let corrected = Dataset {
        language: d.language.clone(),
        intents,
        entities: d.entities.clone(),
    };
    let violations = validate_dataset(&corrected);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(DisambiguationReport {
        seed,
        repetitions,
        folds,
        utterances: reports,
        corrected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{slot, text};

    #[test]
    fn slot_edits_rebuild_chunks() {
        let u = Utterance::from_chunks(vec![
            text("set the brightness to 60 in the "),
            slot("kitchen", "room", "room"),
        ]);
        let v = vec![Verdict::AddSlot {
            entity: "brightness".into(),
            slot_name: "brightness".into(),
            range: CharRange { start: 22, end: 24 },
            text: "60".into(),
        }];
        let edited = apply_slot_edits(&u, &v);
        assert_eq!(edited.text(), u.text());
        let slots = edited.slots();
        assert_eq!(slots.len(), 2);
        assert_eq!(slots[0].text, "60");
        assert_eq!(slots[1].text, "kitchen");

        let u = Utterance::from_chunks(vec![text("lights in the living "), slot("room", "room", "room")]);
        let v = vec![Verdict::ExtendSlot {
            entity: "room".into(),
            slot_name: "room".into(),
            from: CharRange { start: 21, end: 25 },
            to: CharRange { start: 14, end: 25 },
        }];
        let edited = apply_slot_edits(&u, &v);
        assert_eq!(edited.slots()[0].text, "living room");
    }

    #[test]
    fn even_repetitions_are_rejected() {
        let d = crate::fixtures::lights_clean();
        assert!(disambiguate(&d, 4, 3, 0, &EvalConfig::default()).is_err());
    }
}
