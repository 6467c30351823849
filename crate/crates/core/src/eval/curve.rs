use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, score_predictions, subset, EvalConfig, Prediction};
use crate::dataset::Dataset;
use crate::engine::train_engine;
use crate::error::{Error, Result};

/// Fraction of each intent kept aside as the fixed test set.
pub const HELD_OUT_FRACTION: f64 = 0.2;
/// Seed of the test-set split, independent of the sampling seed.
pub const HELD_OUT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Training utterances per intent.
    pub size: usize,
    pub intent_f1: f64,
    pub slot_f1: f64,
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// For each size, train on that many utterances per intent (sampled with
/// `seed`) and score micro F1 on a fixed held-out set.
pub fn learning_curve(d: &Dataset, sizes: &[usize], seed: u64, cfg: &EvalConfig) -> Result<Vec<CurvePoint>> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::InvalidArgument(
            "sizes must be positive and strictly ascending".into(),
        ));
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(HELD_OUT_SEED);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: BTreeSet<(String, usize)> = BTreeSet::new();
    let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (intent, def) in &d.intents {
        let order = shuffled(def.utterances.len(), &mut split_rng);
        let n_test = ((def.utterances.len() as f64) * HELD_OUT_FRACTION).ceil() as usize;
        test.extend(order[..n_test].iter().map(|&i| (intent.clone(), i)));
        let mut pool = order[n_test..].to_vec();
        pool.sort_unstable();
        pool.shuffle(&mut sample_rng);
        let largest = *sizes.last().expect("non-empty");
        if pool.len() < largest {
            return Err(Error::NotEnoughData {
                intent: intent.clone(),
                required: largest,
                available: pool.len(),
            });
        }
        pools.insert(intent.clone(), pool);
    }
    let mut out = Vec::with_capacity(sizes.len());
    for (step, &size) in sizes.iter().enumerate() {
        let chosen: BTreeSet<(String, usize)> = pools
            .iter()
            .flat_map(|(intent, pool)| pool[..size].iter().map(move |&i| (intent.clone(), i)))
            .collect();
        let train = subset(d, |intent, i| chosen.contains(&(intent.to_string(), i)));
        let engine = train_engine(&train, &cfg.engine, derive_seed(seed, step as u64))?;
        let predictions: Vec<Prediction> = test
            .iter()
            .map(|(intent, index)| {
                let text = d.intents[intent].utterances[*index].text();
                let (result, parser) = engine.parse_traced(&text, &cfg.reference);
                Prediction {
                    intent: intent.clone(),
                    index: *index,
                    fold: 0,
                    parser,
                    result,
                }
            })
            .collect();
        let scores = score_predictions(d, &predictions, cfg.slot_matching);
        log::info!("learning curve: size {size} done");
        out.push(CurvePoint {
            size,
            intent_f1: scores.intent_micro().f1,
            slot_f1: scores.slot_micro().f1,
        });
    }
    Ok(out)
}

/// Tab-separated table with a header row.
pub fn curve_tsv(points: &[CurvePoint]) -> String {
    let mut s = String::from("size\tintent_f1\tslot_f1\n");
    for p in points {
        s.push_str(&format!("{}\t{}\t{}\n", p.size, p.intent_f1, p.slot_f1));
    }
    s
}
