use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FoldAssignment, Prediction};
use crate::align::align_utterance;
use crate::dataset::Dataset;

/// How predicted slots are matched against annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotMatching {
    /// Same entity and identical character range.
    Exact,
    /// Same entity and overlapping character ranges.
    Overlap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_counts(c: Counts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
        }
    }
}

/// Confusion counts per intent and per slot entity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub intents: BTreeMap<String, Counts>,
    pub slots: BTreeMap<String, Counts>,
}

impl Scores {
    fn micro(counts: &BTreeMap<String, Counts>) -> Metrics {
        let mut total = Counts::default();
        counts.values().for_each(|c| total += *c);
        Metrics::from_counts(total)
    }

    fn macro_f1(counts: &BTreeMap<String, Counts>) -> f64 {
        if counts.is_empty() {
            return 0.0;
        }
        counts.values().map(|c| Metrics::from_counts(*c).f1).sum::<f64>() / counts.len() as f64
    }

    pub fn intent_micro(&self) -> Metrics {
        Self::micro(&self.intents)
    }

    pub fn slot_micro(&self) -> Metrics {
        Self::micro(&self.slots)
    }
}

type SlotKey = (String, usize, usize);

fn count_slots(gold: &[SlotKey], predicted: &[SlotKey], matching: SlotMatching, out: &mut BTreeMap<String, Counts>) {
    let mut used = vec![false; gold.len()];
    for p in predicted {
        let hit = gold.iter().enumerate().position(|(i, g)| {
            !used[i]
                && g.0 == p.0
                && match matching {
                    SlotMatching::Exact => g.1 == p.1 && g.2 == p.2,
                    SlotMatching::Overlap => g.1 < p.2 && p.1 < g.2,
                }
        });
        let c = out.entry(p.0.clone()).or_default();
        match hit {
            Some(i) => {
                used[i] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    for (g, u) in gold.iter().zip(used) {
        if !u {
            out.entry(g.0.clone()).or_default().fn_ += 1;
        }
    }
}

/// Compare predictions against the annotations of `d`. Intents count a
/// false negative for the gold intent and a false positive for the
/// predicted one on a mismatch; slots are compared regardless of intent.
pub fn score_predictions(d: &Dataset, predictions: &[Prediction], matching: SlotMatching) -> Scores {
    let mut scores = Scores::default();
    for intent in d.intents.keys() {
        scores.intents.insert(intent.clone(), Counts::default());
    }
    for p in predictions {
        let predicted = p.result.intent.intent_name.as_deref();
        if predicted == Some(p.intent.as_str()) {
            scores.intents.entry(p.intent.clone()).or_default().tp += 1;
        } else {
            scores.intents.entry(p.intent.clone()).or_default().fn_ += 1;
            if let Some(other) = predicted {
                scores.intents.entry(other.to_string()).or_default().fp += 1;
            }
        }
        let aligned = align_utterance(&d.intents[&p.intent].utterances[p.index]);
        let gold: Vec<SlotKey> = aligned
            .slots
            .iter()
            .map(|s| (s.entity.clone(), s.span.start, s.span.end))
            .collect();
        let found: Vec<SlotKey> = p
            .result
            .slots
            .iter()
            .map(|s| (s.entity.clone(), s.range.start, s.range.end))
            .collect();
        count_slots(&gold, &found, matching, &mut scores.slots);
    }
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTables {
    pub intents: BTreeMap<String, Counts>,
    pub slots: BTreeMap<String, Counts>,
}

/// Cross-validation results; per-slot tables are keyed by entity name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub folds: usize,
    pub slot_matching: SlotMatching,
    pub counts: CountTables,
    pub intents: BTreeMap<String, Metrics>,
    pub slots: BTreeMap<String, Metrics>,
    pub intent_micro: Metrics,
    pub intent_macro_f1: f64,
    pub slot_micro: Metrics,
    pub slot_macro_f1: f64,
    pub assignments: Vec<FoldAssignment>,
}

impl EvalReport {
    pub fn new(
        scores: Scores,
        seed: u64,
        folds: usize,
        slot_matching: SlotMatching,
        assignments: Vec<FoldAssignment>,
    ) -> Self {
        let table = |c: &BTreeMap<String, Counts>| {
            c.iter()
                .map(|(k, v)| (k.clone(), Metrics::from_counts(*v)))
                .collect()
        };
        EvalReport {
            seed,
            folds,
            slot_matching,
            intents: table(&scores.intents),
            slots: table(&scores.slots),
            intent_micro: scores.intent_micro(),
            intent_macro_f1: Scores::macro_f1(&scores.intents),
            slot_micro: scores.slot_micro(),
            slot_macro_f1: Scores::macro_f1(&scores.slots),
            counts: CountTables {
                intents: scores.intents,
                slots: scores.slots,
            },
            assignments,
        }
    }
}
