//! Cross-validation, metrics, learning curves and dataset disambiguation.

mod curve;
mod disambiguate;
mod metrics;

pub use curve::{curve_tsv, learning_curve, CurvePoint, HELD_OUT_FRACTION, HELD_OUT_SEED};
pub use disambiguate::{disambiguate, DEFAULT_FOLDS, DEFAULT_REPETITIONS, DisambiguationReport, UtteranceReport, Verdict};
pub use metrics::{score_predictions, Counts, EvalReport, Metrics, Scores, SlotMatching};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builtin::ReferenceTime;
use crate::dataset::{Dataset, IntentDef};
use crate::engine::{train_engine, training_reference, EngineConfig, ParseResult, ParserKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub engine: EngineConfig,
    pub slot_matching: SlotMatching,
    /// Reference instant for parsing held-out queries.
    pub reference: ReferenceTime,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            engine: EngineConfig::default(),
            slot_matching: SlotMatching::Exact,
            reference: training_reference(),
        }
    }
}

/// Position of an utterance in the dataset and its held-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub intent: String,
    pub index: usize,
    pub fold: usize,
}

/// Parse of one held-out utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub intent: String,
    pub index: usize,
    pub fold: usize,
    pub parser: ParserKind,
    pub result: ParseResult,
}

/// Mix a master seed with a sub-task index.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stratified fold assignment: each intent's utterances are shuffled and
/// dealt round-robin into `k` folds.
pub fn assign_folds(d: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldAssignment>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (intent, def) in &d.intents {
        if def.utterances.len() < k {
            return Err(Error::NotEnoughData {
                intent: intent.clone(),
                required: k,
                available: def.utterances.len(),
            });
        }
        let mut order: Vec<usize> = (0..def.utterances.len()).collect();
        order.shuffle(&mut rng);
        let mut folds = vec![0; order.len()];
        for (position, &index) in order.iter().enumerate() {
            folds[index] = position % k;
        }
        out.extend(folds.into_iter().enumerate().map(|(index, fold)| FoldAssignment {
            intent: intent.clone(),
            index,
            fold,
        }));
    }
    Ok(out)
}

/// Copy of `d` restricted to the utterances selected by `keep`.
pub(crate) fn subset(d: &Dataset, keep: impl Fn(&str, usize) -> bool) -> Dataset {
    Dataset {
        language: d.language.clone(),
        entities: d.entities.clone(),
        intents: d
            .intents
            .iter()
            .map(|(name, def)| {
                let utterances = def
                    .utterances
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| keep(name, *i))
                    .map(|(_, u)| u.clone())
                    .collect();
                (name.clone(), IntentDef { utterances })
            })
            .collect(),
    }
}

/// Train on k-1 folds and parse the held-out fold, for every fold.
/// Folds run in parallel with seeds derived from `seed`.
pub fn cross_validate(
    d: &Dataset,
    assignments: &[FoldAssignment],
    k: usize,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<Vec<Prediction>> {
    let fold_of: BTreeMap<(&str, usize), usize> = assignments
        .iter()
        .map(|a| ((a.intent.as_str(), a.index), a.fold))
        .collect();
    let per_fold: Vec<Vec<Prediction>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train = subset(d, |intent, i| fold_of[&(intent, i)] != fold);
            let engine = train_engine(&train, &cfg.engine, derive_seed(seed, fold as u64))?;
            Ok(assignments
                .iter()
                .filter(|a| a.fold == fold)
                .map(|a| {
                    let text = d.intents[&a.intent].utterances[a.index].text();
                    let (result, parser) = engine.parse_traced(&text, &cfg.reference);
                    Prediction {
                        intent: a.intent.clone(),
                        index: a.index,
                        fold,
                        parser,
                        result,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Prediction> = per_fold.into_iter().flatten().collect();
    out.sort_by(|a, b| a.intent.cmp(&b.intent).then(a.index.cmp(&b.index)));
    Ok(out)
}

/// Stratified, seeded k-fold cross-validation.
pub fn evaluate_cv(d: &Dataset, k: usize, seed: u64, cfg: &EvalConfig) -> Result<EvalReport> {
    let assignments = assign_folds(d, k, seed)?;
    let predictions = cross_validate(d, &assignments, k, seed, cfg)?;
    let scores = score_predictions(d, &predictions, cfg.slot_matching);
    Ok(EvalReport::new(scores, seed, k, cfg.slot_matching, assignments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn folds_are_stratified_and_seeded() {
        let d = fixtures::smart_lights();
        let a = assign_folds(&d, 5, 3).unwrap();
        assert_eq!(a, assign_folds(&d, 5, 3).unwrap());
        assert_ne!(a, assign_folds(&d, 5, 4).unwrap());
        for intent in d.intents.keys() {
            let mut sizes = [0usize; 5];
            a.iter().filter(|x| &x.intent == intent).for_each(|x| sizes[x.fold] += 1);
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn too_many_folds() {
        let d = fixtures::hand_scored();
        assert!(matches!(
            evaluate_cv(&d, 6, 0, &EvalConfig::default()),
            Err(Error::NotEnoughData { required: 6, available: 5, .. })
        ));
        assert!(evaluate_cv(&d, 1, 0, &EvalConfig::default()).is_err());
    }
}
