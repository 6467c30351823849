//! Katz back-off n-gram model with Good-Turing discounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
/// Counts up to this value are discounted.
pub const GOOD_TURING_MAX: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub count: u64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub total: u64,
    pub alpha: f64,
    pub continuations: BTreeMap<String, Continuation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTable {
    pub order: usize,
    /// Good-Turing discount ratios for counts 1..=5, or `None` when the
    /// order uses add-one estimates.
    pub discounts: Option<Vec<f64>>,
    /// Keyed by the space-joined history.
    pub histories: BTreeMap<String, HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramModel {
    pub order: usize,
    /// Vocabulary size including `</s>` and `<unk>`.
    pub vocabulary_size: usize,
    /// Probability left for unseen words at the unigram level.
    pub unk_prob: f64,
    /// Orders that fell back to add-one estimates.
    pub add_one_orders: Vec<usize>,
    /// Tables for orders 1..=order.
    pub tables: Vec<OrderTable>,
}

fn good_turing(count_of_counts: &BTreeMap<u64, u64>) -> Option<Vec<f64>> {
    let n = |r: usize| count_of_counts.get(&(r as u64)).copied().unwrap_or(0) as f64;
    let k = GOOD_TURING_MAX;
    if (1..=k + 1).any(|r| n(r) == 0.0) {
        return None;
    }
    let common = (k + 1) as f64 * n(k + 1) / n(1);
    if common >= 1.0 {
        return None;
    }
    let mut discounts = Vec::with_capacity(k);
    for r in 1..=k {
        let r_star = (r + 1) as f64 * n(r + 1) / n(r);
        let d = (r_star / r as f64 - common) / (1.0 - common);
        if !(d > 0.0 && d <= 1.0) {
            return None;
        }
        discounts.push(d);
    }
    Some(discounts)
}

fn history_key(h: &[&str]) -> String {
    h.join(" ")
}

impl NGramModel {
    /// Train on sentences (without markers). Order must be 1, 2 or 3.
    pub fn train(sentences: &[Vec<String>], order: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::InvalidArgument(format!("n-gram order {order} not in 1..=3")));
        }
        if sentences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        // counts[k-1][history][word]
        let mut counts: Vec<BTreeMap<Vec<String>, BTreeMap<String, u64>>> = vec![BTreeMap::new(); order];
        for sentence in sentences {
            let mut padded = Vec::with_capacity(sentence.len() + 2);
            padded.push(BOS.to_string());
            padded.extend(sentence.iter().cloned());
            padded.push(EOS.to_string());
            for i in 1..padded.len() {
                for k in 1..=order {
                    if i + 1 < k {
                        break;
                    }
                    let history = padded[i + 1 - k..i].to_vec();
                    *counts[k - 1]
                        .entry(history)
                        .or_default()
                        .entry(padded[i].clone())
                        .or_insert(0) += 1;
                }
            }
        }
        let vocabulary: BTreeSet<&String> = counts[0]
            .values()
            .flat_map(|m| m.keys())
            .collect();
        let vocabulary_size = vocabulary.len() + 1;

        let mut model = NGramModel {
            order,
            vocabulary_size,
            unk_prob: 0.0,
            add_one_orders: Vec::new(),
            tables: Vec::with_capacity(order),
        };
        for (idx, by_history) in counts.iter().enumerate() {
            let k = idx + 1;
            let mut coc = BTreeMap::new();
            for m in by_history.values() {
                for &c in m.values() {
                    *coc.entry(c).or_insert(0u64) += 1;
                }
            }
            let discounts = good_turing(&coc);
            if discounts.is_none() {
                model.add_one_orders.push(k);
            }
            let mut table = OrderTable {
                order: k,
                discounts: discounts.clone(),
                histories: BTreeMap::new(),
            };
            for (history, words) in by_history {
                let total: u64 = words.values().sum();
                let continuations = words
                    .iter()
                    .map(|(w, &c)| {
                        let prob = match &discounts {
                            Some(d) => {
                                let ratio = if (c as usize) <= GOOD_TURING_MAX { d[c as usize - 1] } else { 1.0 };
                                ratio * c as f64 / total as f64
                            }
                            None => (c + 1) as f64 / (total as usize + vocabulary_size) as f64,
                        };
                        (w.clone(), Continuation { count: c, prob })
                    })
                    .collect();
                let refs: Vec<&str> = history.iter().map(String::as_str).collect();
                table.histories.insert(
                    history_key(&refs),
                    HistoryEntry {
                        total,
                        alpha: 0.0,
                        continuations,
                    },
                );
            }
            model.tables.push(table);
            if k == 1 {
                let entry = &model.tables[0].histories[""];
                let seen: f64 = entry.continuations.values().map(|c| c.prob).sum();
                model.unk_prob = (1.0 - seen).max(0.0);
            } else {
                model.compute_alphas(k);
            }
        }
        Ok(model)
    }

    fn compute_alphas(&mut self, k: usize) {
        let keys: Vec<String> = self.tables[k - 1].histories.keys().cloned().collect();
        for key in keys {
            let history: Vec<&str> = key.split(' ').collect();
            let lower = &history[1..];
            let entry = &self.tables[k - 1].histories[&key];
            let seen: f64 = entry.continuations.values().map(|c| c.prob).sum();
            let seen_lower: f64 = entry
                .continuations
                .keys()
                .map(|w| self.prob_raw(w, lower, true))
                .sum();
            let beta = (1.0 - seen).max(0.0);
            let denominator = 1.0 - seen_lower;
            let entry = self.tables[k - 1].histories.get_mut(&key).expect("history");
            if denominator <= 1e-12 {
                // Lower orders leave nothing for unseen words: keep the mass
                // on the observed continuations.
                for c in entry.continuations.values_mut() {
                    c.prob /= seen;
                }
                entry.alpha = 0.0;
            } else {
                entry.alpha = beta / denominator;
            }
        }
    }

    fn prob_raw(&self, word: &str, history: &[&str], unk: bool) -> f64 {
        let history = &history[history.len().saturating_sub(self.order - 1)..];
        if history.is_empty() {
            let entry = &self.tables[0].histories[""];
            return match entry.continuations.get(word) {
                Some(c) => c.prob,
                None if unk => self.unk_prob,
                None => 0.0,
            };
        }
        let table = &self.tables[history.len()];
        match table.histories.get(&history_key(history)) {
            None => self.prob_raw(word, &history[1..], unk),
            Some(entry) => match entry.continuations.get(word) {
                Some(c) => c.prob,
                None if entry.alpha == 0.0 => 0.0,
                None => entry.alpha * self.prob_raw(word, &history[1..], unk),
            },
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.tables[0].histories[""].continuations.contains_key(word)
    }

    /// `P(word | history)`; words outside the vocabulary are scored as
    /// `<unk>`, which has probability zero when `unk` is false.
    pub fn prob(&self, word: &str, history: &[&str], unk: bool) -> f64 {
        if word == UNK || !self.contains(word) {
            return if unk { self.prob_raw(UNK, history, true) } else { 0.0 };
        }
        self.prob_raw(word, history, unk)
    }

    /// Observed vocabulary (including `</s>`, excluding `<unk>`).
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.tables[0].histories[""].continuations.keys().map(String::as_str)
    }

    /// Natural-log probability of a whole sentence including `</s>`.
    pub fn sentence_logprob(&self, words: &[&str], unk: bool) -> f64 {
        let mut history = vec![BOS];
        let mut total = 0.0;
        for &w in words.iter().chain(std::iter::once(&EOS)) {
            total += self.prob(w, &history, unk).ln();
            history.push(w);
        }
        total
    }

    pub fn uses_add_one(&self) -> bool {
        !self.add_one_orders.is_empty()
    }
}
