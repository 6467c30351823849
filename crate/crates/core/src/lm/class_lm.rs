//! Class-based language model: an n-gram over words and entity classes,
//! with one sub-model per entity supplying the value probabilities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ngram::{NGramModel, BOS, EOS, UNK};
use crate::align::align_utterance;
use crate::dataset::{Dataset, EntityDef};
use crate::error::{Error, Result};
use crate::normalize::normalize_string;

const CLASS_PREFIX: char = '@';

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Word(String),
    Class(String),
}

impl Symbol {
    /// Token used inside the pattern n-gram.
    pub fn key(&self) -> String {
        match self {
            Symbol::Word(w) => w.clone(),
            Symbol::Class(e) => format!("{CLASS_PREFIX}{e}"),
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Word(w) => f.write_str(w),
            Symbol::Class(e) => f.write_str(&e.to_uppercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatternCorpus {
    pub sentences: Vec<Vec<Symbol>>,
}

impl PatternCorpus {
    pub fn display(&self) -> Vec<String> {
        self.sentences
            .iter()
            .map(|s| s.iter().map(Symbol::to_string).collect::<Vec<_>>().join(" "))
            .collect()
    }

    pub fn entities(&self) -> BTreeSet<String> {
        self.sentences
            .iter()
            .flatten()
            .filter_map(|s| match s {
                Symbol::Class(e) => Some(e.clone()),
                Symbol::Word(_) => None,
            })
            .collect()
    }
}

/// Replace every slot by its entity class; other text becomes normalized words.
pub fn abstract_patterns(d: &Dataset) -> PatternCorpus {
    let mut sentences = Vec::new();
    for intent in d.intents.values() {
        for utterance in &intent.utterances {
            let aligned = align_utterance(utterance);
            let mut out = Vec::new();
            let mut i = 0;
            while i < aligned.nt.len() {
                if let Some(s) = aligned.slots.iter().find(|s| s.tokens.start == i) {
                    out.push(Symbol::Class(s.entity.clone()));
                    i = s.tokens.end;
                } else {
                    out.push(Symbol::Word(aligned.nt.tokens[i].text.clone()));
                    i += 1;
                }
            }
            sentences.push(out);
        }
    }
    PatternCorpus { sentences }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityModelKind {
    Union,
    NGram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EntityModel {
    /// Uniform distribution over distinct values.
    Union { values: Vec<Vec<String>> },
    /// N-gram over the value tokens, retrained when values are added.
    NGram {
        order: usize,
        values: Vec<Vec<String>>,
        model: Option<NGramModel>,
    },
}

fn dedup(values: impl IntoIterator<Item = Vec<String>>) -> Vec<Vec<String>> {
    let mut seen = BTreeSet::new();
    values
        .into_iter()
        .filter(|v| !v.is_empty() && seen.insert(v.clone()))
        .collect()
}

impl EntityModel {
    pub fn new(kind: EntityModelKind, values: Vec<Vec<String>>, order: usize) -> Result<Self> {
        let values = dedup(values);
        Ok(match kind {
            EntityModelKind::Union => EntityModel::Union { values },
            EntityModelKind::NGram => {
                let model = if values.is_empty() {
                    None
                } else {
                    Some(NGramModel::train(&values, order)?)
                };
                EntityModel::NGram {
                    order,
                    values,
                    model,
                }
            }
        })
    }

    pub fn values(&self) -> &[Vec<String>] {
        match self {
            EntityModel::Union { values } | EntityModel::NGram { values, .. } => values,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values().is_empty()
    }

    /// Probability of a value token sequence.
    pub fn prob(&self, value: &[&str]) -> f64 {
        match self {
            EntityModel::Union { values } => {
                if values.iter().any(|v| v.iter().map(String::as_str).eq(value.iter().copied())) {
                    1.0 / values.len() as f64
                } else {
                    0.0
                }
            }
            EntityModel::NGram { model: Some(m), .. } => {
                if value.is_empty() || !value.iter().all(|w| m.contains(w)) {
                    return 0.0;
                }
                m.sentence_logprob(value, false).exp()
            }
            EntityModel::NGram { model: None, .. } => 0.0,
        }
    }

    /// Candidate value lengths starting at `words[i]` with non-zero probability.
    fn candidates(&self, words: &[&str], i: usize) -> Vec<(usize, f64)> {
        match self {
            EntityModel::Union { values } => values
                .iter()
                .filter(|v| {
                    i + v.len() <= words.len()
                        && v.iter().zip(&words[i..]).all(|(a, b)| a == b)
                })
                .map(|v| (v.len(), 1.0 / values.len() as f64))
                .collect(),
            EntityModel::NGram { model: Some(m), .. } => {
                (1..=words.len() - i)
                    .take_while(|&len| m.contains(words[i + len - 1]) && words[i + len - 1] != EOS)
                    .map(|len| (len, self.prob(&words[i..i + len])))
                    .filter(|(_, p)| *p > 0.0)
                    .collect()
            }
            EntityModel::NGram { model: None, .. } => Vec::new(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<Vec<String>> {
        match self {
            EntityModel::Union { values } => {
                if values.is_empty() {
                    None
                } else {
                    Some(values[rng.gen_range(0..values.len())].clone())
                }
            }
            EntityModel::NGram { model: Some(m), values, .. } => {
                let max = values.iter().map(Vec::len).max().unwrap_or(1) * 2;
                let out = sample_ngram(m, rng, max, &|_| true);
                (!out.is_empty()).then_some(out)
            }
            EntityModel::NGram { model: None, .. } => None,
        }
    }

    /// Add values; existing values are ignored.
    pub fn with_values(&self, new: Vec<Vec<String>>) -> Result<EntityModel> {
        let all: Vec<Vec<String>> = self.values().iter().cloned().chain(new).collect();
        Ok(match self {
            EntityModel::Union { .. } => EntityModel::new(EntityModelKind::Union, all, 1)?,
            EntityModel::NGram { order, .. } => EntityModel::new(EntityModelKind::NGram, all, *order)?,
        })
    }
}

/// Sample words from an n-gram until `</s>` or `max_len` words.
fn sample_ngram(
    m: &NGramModel,
    rng: &mut ChaCha8Rng,
    max_len: usize,
    allowed: &dyn Fn(&str) -> bool,
) -> Vec<String> {
    let vocabulary: Vec<&str> = m.vocabulary().filter(|w| allowed(w)).collect();
    let mut history: Vec<String> = vec![BOS.to_string()];
    let mut out = Vec::new();
    while out.len() < max_len {
        let h: Vec<&str> = history.iter().map(String::as_str).collect();
        let weights: Vec<f64> = vocabulary.iter().map(|w| m.prob(w, &h, false)).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut x = rng.gen::<f64>() * total;
        let mut pick = vocabulary.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if x < *w {
                pick = j;
                break;
            }
            x -= w;
        }
        let word = vocabulary[pick];
        if word == EOS {
            break;
        }
        out.push(word.to_string());
        history.push(word.to_string());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Sum over all derivations.
    Sum,
    /// Best single derivation.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassLmConfig {
    pub order: usize,
    pub entity_model: EntityModelKind,
    pub entity_order: usize,
}

impl Default for ClassLmConfig {
    fn default() -> Self {
        ClassLmConfig {
            order: 2,
            entity_model: EntityModelKind::Union,
            entity_order: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLm {
    pub pattern_lm: NGramModel,
    pub entity_models: BTreeMap<String, EntityModel>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl ClassLm {
    /// Train the pattern model on a corpus and pair it with entity models.
    pub fn train(
        corpus: &PatternCorpus,
        entity_models: BTreeMap<String, EntityModel>,
        order: usize,
    ) -> Result<Self> {
        for entity in corpus.entities() {
            if !entity_models.contains_key(&entity) {
                return Err(Error::UnknownEntity(entity));
            }
        }
        let sentences: Vec<Vec<String>> = corpus
            .sentences
            .iter()
            .map(|s| s.iter().map(Symbol::key).collect())
            .collect();
        Ok(ClassLm {
            pattern_lm: NGramModel::train(&sentences, order)?,
            entity_models,
        })
    }

    /// Patterns from the dataset; custom entities use their known values and
    /// builtin entities the slot values observed in the dataset.
    pub fn from_dataset(d: &Dataset, cfg: &ClassLmConfig) -> Result<Self> {
        let corpus = abstract_patterns(d);
        let mut models = BTreeMap::new();
        for entity in corpus.entities() {
            let values: Vec<Vec<String>> = match d.entities.get(&entity) {
                Some(EntityDef::Custom(_)) | Some(EntityDef::Builtin { .. }) => d
                    .entity_values(&entity)
                    .iter()
                    .map(|v| v.split(' ').map(str::to_string).collect())
                    .collect(),
                None => return Err(Error::UnknownEntity(entity)),
            };
            models.insert(entity, EntityModel::new(cfg.entity_model, values, cfg.entity_order)?);
        }
        ClassLm::train(&corpus, models, cfg.order)
    }

    fn history<'a>(&self, h: &'a [String]) -> &'a [String] {
        &h[h.len().saturating_sub(self.pattern_lm.order - 1)..]
    }

    /// Natural-log probability of a normalized sentence, aggregating over
    /// segmentations into words and entity values.
    pub fn score(&self, tokens: &[&str], mode: ScoreMode, unk: bool) -> f64 {
        let combine = |a: f64, b: f64| match mode {
            ScoreMode::Sum => log_add(a, b),
            ScoreMode::Max => a.max(b),
        };
        let n = tokens.len();
        let mut states: Vec<BTreeMap<Vec<String>, f64>> = vec![BTreeMap::new(); n + 1];
        states[0].insert(self.history(&[BOS.to_string()]).to_vec(), 0.0);
        let lm = &self.pattern_lm;
        for i in 0..n {
            let current = std::mem::take(&mut states[i]);
            for (history, logp) in &current {
                let h: Vec<&str> = history.iter().map(String::as_str).collect();
                let push = |states: &mut Vec<BTreeMap<Vec<String>, f64>>, end: usize, symbol: String, p: f64| {
                    if p <= 0.0 {
                        return;
                    }
                    let mut next = history.clone();
                    next.push(symbol);
                    let next = self.history(&next).to_vec();
                    let value = logp + p.ln();
                    let slot = states[end].entry(next).or_insert(f64::NEG_INFINITY);
                    *slot = combine(*slot, value);
                };
                let word = tokens[i];
                if lm.contains(word) && !word.starts_with(CLASS_PREFIX) && word != EOS {
                    push(&mut states, i + 1, word.to_string(), lm.prob(word, &h, unk));
                } else if unk {
                    push(&mut states, i + 1, UNK.to_string(), lm.prob(UNK, &h, true));
                }
                for (entity, model) in &self.entity_models {
                    let class = Symbol::Class(entity.clone()).key();
                    let p_class = lm.prob(&class, &h, unk);
                    if p_class <= 0.0 {
                        continue;
                    }
                    for (len, p_value) in model.candidates(tokens, i) {
                        push(&mut states, i + len, class.clone(), p_class * p_value);
                    }
                }
            }
            states[i] = current;
        }
        let mut total = f64::NEG_INFINITY;
        for (history, logp) in &states[n] {
            let h: Vec<&str> = history.iter().map(String::as_str).collect();
            let p = lm.prob(EOS, &h, unk);
            if p > 0.0 {
                total = combine(total, logp + p.ln());
            }
        }
        total
    }

    /// Add values to an entity model. The pattern model is not retrained.
    pub fn inject(&self, entity: &str, values: &[String]) -> Result<ClassLm> {
        let model = self
            .entity_models
            .get(entity)
            .ok_or_else(|| Error::UnknownEntity(entity.to_string()))?;
        let new: Vec<Vec<String>> = values
            .iter()
            .map(|v| normalize_string(v))
            .filter(|v| !v.is_empty())
            .map(|v| v.split(' ').map(str::to_string).collect())
            .collect();
        let mut out = self.clone();
        out.entity_models.insert(entity.to_string(), model.with_values(new)?);
        Ok(out)
    }

    /// Ancestral sample of at most `max_len` words.
    pub fn sample(&self, seed: u64, max_len: usize) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lm = &self.pattern_lm;
        let allowed: Vec<&str> = lm
            .vocabulary()
            .filter(|w| match w.strip_prefix(CLASS_PREFIX) {
                Some(entity) => self.entity_models.get(entity).is_some_and(|m| !m.is_empty()),
                None => true,
            })
            .collect();
        let mut history = vec![BOS.to_string()];
        let mut out: Vec<String> = Vec::new();
        loop {
            let h: Vec<&str> = self.history(&history).iter().map(String::as_str).collect();
            let weights: Vec<f64> = allowed.iter().map(|w| lm.prob(w, &h, false)).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut x = rng.gen::<f64>() * total;
            let mut pick = allowed.len() - 1;
            for (j, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = j;
                    break;
                }
                x -= w;
            }
            let symbol = allowed[pick];
            if symbol == EOS {
                break;
            }
            let words = match symbol.strip_prefix(CLASS_PREFIX) {
                Some(entity) => match self.entity_models[entity].sample(&mut rng) {
                    Some(v) => v,
                    None => break,
                },
                None => vec![symbol.to_string()],
            };
            if out.len() + words.len() > max_len {
                break;
            }
            out.extend(words);
            history.push(symbol.to_string());
        }
        out
    }
}

pub fn score_sentence(lm: &ClassLm, tokens: &[&str], mode: ScoreMode) -> f64 {
    lm.score(tokens, mode, true)
}

/// `exp(-(sum log P) / N)` with `N` counting tokens plus sentence ends, in
/// sum mode. Infinite when some sentence has probability zero.
pub fn perplexity(lm: &ClassLm, sentences: &[Vec<String>], unk: bool) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for s in sentences {
        let words: Vec<&str> = s.iter().map(String::as_str).collect();
        total += lm.score(&words, ScoreMode::Sum, unk);
        n += s.len() + 1;
    }
    Ok((-total / n as f64).exp())
}

pub fn inject_entity_values(lm: &ClassLm, entity: &str, values: &[String]) -> Result<ClassLm> {
    lm.inject(entity, values)
}

pub fn sample(lm: &ClassLm, seed: u64, max_len: usize) -> Vec<String> {
    lm.sample(seed, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{slot, text, CustomEntity, EntityValue, IntentDef, Utterance};

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn union(values: &[&str]) -> EntityModel {
        EntityModel::new(EntityModelKind::Union, values.iter().map(|v| words(v)).collect(), 1).unwrap()
    }

    fn play_artist() -> ClassLm {
        let corpus = PatternCorpus {
            sentences: vec![vec![Symbol::Word("play".into()), Symbol::Class("artist".into())]],
        };
        let models = [("artist".to_string(), union(&["the rolling stones", "the beatles"]))]
            .into_iter()
            .collect();
        ClassLm::train(&corpus, models, 2).unwrap()
    }

    #[test]
    fn abstraction_replaces_slots() {
        let mut d = Dataset {
            language: "en".into(),
            intents: BTreeMap::new(),
            entities: BTreeMap::new(),
        };
        d.entities.insert(
            "artist".into(),
            EntityDef::Custom(CustomEntity {
                values: vec![EntityValue {
                    value: "The Rolling Stones".into(),
                    synonyms: vec![],
                }],
                automatically_extensible: true,
            }),
        );
        d.intents.insert(
            "Play".into(),
            IntentDef {
                utterances: vec![
                    Utterance::from_chunks(vec![
                        text("Play some music by "),
                        slot("The Rolling Stones", "artist", "artist"),
                    ]),
                    Utterance::from_chunks(vec![
                        slot("Adele", "artist", "a"),
                        text(" "),
                        slot("Queen", "artist", "b"),
                    ]),
                    Utterance::from_chunks(vec![text("stop")]),
                ],
            },
        );
        let corpus = abstract_patterns(&d);
        assert_eq!(corpus.display(), vec!["play some music by ARTIST", "ARTIST ARTIST", "stop"]);
    }

    #[test]
    fn values_of_a_class_share_weight() {
        let lm = play_artist();
        let a = lm.score(&toks("play the beatles"), ScoreMode::Sum, false);
        let b = lm.score(&toks("play the rolling stones"), ScoreMode::Sum, false);
        assert!(a.is_finite());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_entity_contributes_nothing() {
        let corpus = PatternCorpus {
            sentences: vec![vec![Symbol::Word("call".into()), Symbol::Class("contact".into())]],
        };
        let models = [("contact".to_string(), union(&[]))].into_iter().collect();
        let lm = ClassLm::train(&corpus, models, 2).unwrap();
        assert_eq!(lm.score(&toks("call bob"), ScoreMode::Sum, false), f64::NEG_INFINITY);
    }

    #[test]
    fn injection_makes_sentences_scorable() {
        let corpus = PatternCorpus {
            sentences: vec![vec![Symbol::Word("call".into()), Symbol::Class("contact".into())]],
        };
        let models = [("contact".to_string(), union(&["john smith"]))].into_iter().collect();
        let lm = ClassLm::train(&corpus, models, 2).unwrap();
        assert_eq!(lm.score(&toks("call jane doe"), ScoreMode::Sum, false), f64::NEG_INFINITY);
        let injected = lm.inject("contact", &["Jane Doe".to_string()]).unwrap();
        let jane = injected.score(&toks("call jane doe"), ScoreMode::Sum, false);
        let john = injected.score(&toks("call john smith"), ScoreMode::Sum, false);
        assert!(jane.is_finite());
        assert_eq!(jane, john);
        assert_eq!(injected.pattern_lm, lm.pattern_lm);
        let again = injected.inject("contact", &["jane doe".to_string()]).unwrap();
        assert_eq!(again.score(&toks("call jane doe"), ScoreMode::Sum, false), jane);
        assert!(matches!(lm.inject("nobody", &[]), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn sum_bounds_max() {
        let corpus = PatternCorpus {
            sentences: vec![
                vec![Symbol::Word("play".into()), Symbol::Class("artist".into())],
                vec![Symbol::Word("play".into()), Symbol::Word("the".into()), Symbol::Word("beatles".into())],
            ],
        };
        let models = [("artist".to_string(), union(&["the beatles", "beatles"]))].into_iter().collect();
        let lm = ClassLm::train(&corpus, models, 2).unwrap();
        let s = toks("play the beatles");
        let sum = lm.score(&s, ScoreMode::Sum, true);
        let max = lm.score(&s, ScoreMode::Max, true);
        assert!(sum > max);
    }

    #[test]
    fn samples_are_deterministic_and_scorable() {
        let lm = ClassLm::from_dataset(&crate::fixtures::smart_lights(), &Default::default()).unwrap();
        for seed in 0..30 {
            let s = lm.sample(seed, 12);
            assert_eq!(s, lm.sample(seed, 12));
            assert!(s.len() <= 12);
            let t: Vec<&str> = s.iter().map(String::as_str).collect();
            assert!(lm.score(&t, ScoreMode::Sum, false).is_finite(), "{s:?}");
        }
    }

    #[test]
    fn perplexity_of_impossible_sentence_is_infinite() {
        let lm = play_artist();
        let corpus = vec![words("play the beatles"), words("zebra")];
        assert_eq!(perplexity(&lm, &corpus, false).unwrap(), f64::INFINITY);
        assert!(perplexity(&lm, &corpus, true).unwrap().is_finite());
    }

    #[test]
    fn ngram_entity_model_generalizes() {
        let m = EntityModel::new(
            EntityModelKind::NGram,
            vec![words("new york"), words("new jersey"), words("york")],
            2,
        )
        .unwrap();
        assert!(m.prob(&toks("new york")) > 0.0);
        assert_eq!(m.prob(&toks("boston")), 0.0);
        let injected = m.with_values(vec![words("boston")]).unwrap();
        assert!(injected.prob(&toks("boston")) > 0.0);
    }
}
