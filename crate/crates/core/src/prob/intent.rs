//! Multinomial logistic regression over unigram and bigram counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::optim::{minimize, LbfgsConfig};
use crate::builtin::{extract_builtin, BuiltinKind, BuiltinMatch, ReferenceTime};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::normalize::{normalize, NormalizedText};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentClassifierConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for IntentClassifierConfig {
    fn default() -> Self {
        IntentClassifierConfig {
            lambda: 1.0,
            max_iterations: 200,
            gradient_tolerance: 1e-5,
        }
    }
}

/// Token texts with each builtin match collapsed into its class token.
fn substituted(nt: &NormalizedText, matches: &[BuiltinMatch]) -> Vec<String> {
    let mut out = Vec::with_capacity(nt.len());
    let mut i = 0;
    let mut next = matches.iter().peekable();
    while i < nt.len() {
        while next.peek().is_some_and(|m| m.tokens.end <= i) {
            next.next();
        }
        match next.peek() {
            Some(m) if m.tokens.start == i => {
                out.push(m.kind.class_token());
                i = m.tokens.end;
            }
            _ => {
                out.push(nt.tokens[i].text.clone());
                i += 1;
            }
        }
    }
    out
}

/// Unigram (`u:`) and bigram (`b:`) term frequencies.
pub fn featurize_intent(nt: &NormalizedText, matches: &[BuiltinMatch]) -> BTreeMap<String, f64> {
    let words = substituted(nt, matches);
    let mut features = BTreeMap::new();
    for w in &words {
        *features.entry(format!("u:{w}")).or_insert(0.0) += 1.0;
    }
    for pair in words.windows(2) {
        *features.entry(format!("b:{} {}", pair[0], pair[1])).or_insert(0.0) += 1.0;
    }
    features
}

/// Builtin matches of every supported kind, used for class substitution.
pub fn all_builtin_matches(nt: &NormalizedText, reference: &ReferenceTime) -> Vec<BuiltinMatch> {
    extract_builtin(nt, &BuiltinKind::ALL.into_iter().collect(), reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentClassifierModel {
    pub intents: Vec<String>,
    pub vocabulary: BTreeMap<String, usize>,
    /// Row per intent, one column per feature.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct IntentClassifierFile {
    intents: Vec<String>,
    lambda: f64,
    bias: BTreeMap<String, f64>,
    weights: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Serialize for IntentClassifierModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bias = self.intents.iter().cloned().zip(self.bias.iter().copied()).collect();
        let weights = self
            .vocabulary
            .iter()
            .map(|(name, &j)| {
                let row = self
                    .intents
                    .iter()
                    .enumerate()
                    .map(|(k, intent)| (intent.clone(), self.weights[k][j]))
                    .collect();
                (name.clone(), row)
            })
            .collect();
        IntentClassifierFile {
            intents: self.intents.clone(),
            lambda: self.lambda,
            bias,
            weights,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntentClassifierModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = IntentClassifierFile::deserialize(d)?;
        let k = file.intents.len();
        let vocabulary: BTreeMap<String, usize> = file
            .weights
            .keys()
            .enumerate()
            .map(|(j, name)| (name.clone(), j))
            .collect();
        let mut weights = vec![vec![0.0; vocabulary.len()]; k];
        for (j, row) in file.weights.values().enumerate() {
            for (i, intent) in file.intents.iter().enumerate() {
                weights[i][j] = *row
                    .get(intent)
                    .ok_or_else(|| D::Error::custom(format!("missing weight for {intent}")))?;
            }
        }
        let bias = file
            .intents
            .iter()
            .map(|i| file.bias.get(i).copied().unwrap_or(0.0))
            .collect();
        Ok(IntentClassifierModel {
            intents: file.intents,
            vocabulary,
            weights,
            bias,
            lambda: file.lambda,
        })
    }
}

type Sparse = Vec<(usize, f64)>;

fn to_sparse(features: &BTreeMap<String, f64>, vocabulary: &BTreeMap<String, usize>) -> Sparse {
    features
        .iter()
        .filter_map(|(name, &v)| vocabulary.get(name).map(|&j| (j, v)))
        .collect()
}

fn log_softmax(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter_mut().for_each(|s| *s -= lse);
}

/// Regularized negative log-likelihood and its gradient. Parameters are laid
/// out intent-major: `[w_0 .. w_{F-1}, bias]` per intent.
fn objective(theta: &[f64], grad: &mut [f64], data: &[(Sparse, usize)], k: usize, f: usize, lambda: f64) -> f64 {
    let stride = f + 1;
    let mut value = 0.0;
    for (j, g) in grad.iter_mut().enumerate() {
        *g = lambda * theta[j];
        value += 0.5 * lambda * theta[j] * theta[j];
    }
    let mut scores = vec![0.0; k];
    for (x, y) in data {
        for (c, s) in scores.iter_mut().enumerate() {
            let row = &theta[c * stride..(c + 1) * stride];
            *s = row[f] + x.iter().map(|&(j, v)| row[j] * v).sum::<f64>();
        }
        log_softmax(&mut scores);
        value -= scores[*y];
        for (c, s) in scores.iter().enumerate() {
            let coef = s.exp() - if c == *y { 1.0 } else { 0.0 };
            let row = &mut grad[c * stride..(c + 1) * stride];
            row[f] += coef;
            for &(j, v) in x {
                row[j] += coef * v;
            }
        }
    }
    value
}

/// Train on every utterance of the dataset. Needs at least two intents.
pub fn train_intent_classifier(
    d: &Dataset,
    cfg: &IntentClassifierConfig,
    reference: &ReferenceTime,
) -> Result<IntentClassifierModel> {
    let intents: Vec<String> = d.intents.keys().cloned().collect();
    if intents.len() < 2 {
        return Err(Error::SingleIntent(intents.first().cloned().unwrap_or_default()));
    }
    let mut raw = Vec::new();
    for (y, intent) in intents.iter().enumerate() {
        for u in &d.intents[intent].utterances {
            let nt = normalize(&u.text());
            raw.push((featurize_intent(&nt, &all_builtin_matches(&nt, reference)), y));
        }
    }
    Ok(fit(intents, &raw, cfg))
}

/// Fit on pre-featurized examples labeled by index into `intents`.
pub fn fit(
    intents: Vec<String>,
    examples: &[(BTreeMap<String, f64>, usize)],
    cfg: &IntentClassifierConfig,
) -> IntentClassifierModel {
    let mut vocabulary = BTreeMap::new();
    for (features, _) in examples {
        for name in features.keys() {
            vocabulary.entry(name.clone()).or_insert(0);
        }
    }
    for (j, v) in vocabulary.values_mut().enumerate() {
        *v = j;
    }
    let data: Vec<(Sparse, usize)> = examples
        .iter()
        .map(|(features, y)| (to_sparse(features, &vocabulary), *y))
        .collect();
    let k = intents.len();
    let f = vocabulary.len();
    let lbfgs = LbfgsConfig {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.gradient_tolerance,
        history: 10,
    };
    let result = minimize(
        |theta, grad| objective(theta, grad, &data, k, f, cfg.lambda),
        vec![0.0; k * (f + 1)],
        &lbfgs,
    );
    log::debug!(
        "intent classifier: {} iterations, converged={}",
        result.iterations,
        result.converged
    );
    let stride = f + 1;
    IntentClassifierModel {
        weights: (0..k)
            .map(|c| result.x[c * stride..c * stride + f].to_vec())
            .collect(),
        bias: (0..k).map(|c| result.x[c * stride + f]).collect(),
        intents,
        vocabulary,
        lambda: cfg.lambda,
    }
}

impl IntentClassifierModel {
    /// Intent probabilities, most probable first (ties by name).
    pub fn classify(&self, nt: &NormalizedText, matches: &[BuiltinMatch]) -> Vec<(String, f64)> {
        self.classify_features(&featurize_intent(nt, matches))
    }

    pub fn classify_features(&self, features: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
        let x = to_sparse(features, &self.vocabulary);
        let mut scores: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + x.iter().map(|&(j, v)| row[j] * v).sum::<f64>())
            .collect();
        log_softmax(&mut scores);
        let mut out: Vec<(String, f64)> = self
            .intents
            .iter()
            .cloned()
            .zip(scores.into_iter().map(f64::exp))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

pub fn classify_intent(
    m: &IntentClassifierModel,
    nt: &NormalizedText,
    matches: &[BuiltinMatch],
) -> Vec<(String, f64)> {
    m.classify(nt, matches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{text, IntentDef, Utterance};

    fn reference() -> ReferenceTime {
        ReferenceTime::parse("2018-04-18T10:00:00+00:00").unwrap()
    }

    fn dataset(intents: &[(&str, Vec<String>)]) -> Dataset {
        Dataset {
            language: "en".into(),
            intents: intents
                .iter()
                .map(|(name, qs)| {
                    let utterances = qs
                        .iter()
                        .map(|q| Utterance::from_chunks(vec![text(q)]))
                        .collect();
                    (name.to_string(), IntentDef { utterances })
                })
                .collect(),
            entities: BTreeMap::new(),
        }
    }

    #[test]
    fn features_count_and_substitute() {
        let nt = normalize("rate it 5 stars");
        let f = featurize_intent(&nt, &all_builtin_matches(&nt, &reference()));
        assert_eq!(f["u:%SNIPS_NUMBER%"], 1.0);
        assert_eq!(f["b:it %SNIPS_NUMBER%"], 1.0);
        assert!(featurize_intent(&normalize(""), &[]).is_empty());
        assert_eq!(featurize_intent(&normalize("play play"), &[])["u:play"], 2.0);
    }

    #[test]
    fn separable_intents_are_learned() {
        let a: Vec<String> = (0..20).map(|i| format!("play song number{i} loud")).collect();
        let b: Vec<String> = (0..20).map(|i| format!("what weather forecast{i} today")).collect();
        let d = dataset(&[("Music", a.clone()), ("Weather", b.clone())]);
        let m = train_intent_classifier(&d, &Default::default(), &reference()).unwrap();
        for (q, want) in a.iter().map(|q| (q, "Music")).chain(b.iter().map(|q| (q, "Weather"))) {
            let nt = normalize(q);
            let probs = m.classify(&nt, &all_builtin_matches(&nt, &reference()));
            assert_eq!(probs[0].0, want);
            let total: f64 = probs.iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let nt = normalize("zzq qqz");
        assert_eq!(m.classify(&nt, &[]).len(), 2);
    }

    #[test]
    fn identical_queries_split_evenly() {
        let qs = vec!["hello there".to_string(), "good day".to_string()];
        let d = dataset(&[("A", qs.clone()), ("B", qs)]);
        let m = train_intent_classifier(&d, &Default::default(), &reference()).unwrap();
        let probs = m.classify(&normalize("hello there"), &[]);
        assert!((probs[0].1 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn strong_regularization_is_uniform() {
        let d = dataset(&[
            ("A", vec!["alpha one".into(), "alpha two".into()]),
            ("B", vec!["beta one".into()]),
            ("C", vec!["gamma".into()]),
        ]);
        let cfg = IntentClassifierConfig {
            lambda: 1e9,
            ..Default::default()
        };
        let m = train_intent_classifier(&d, &cfg, &reference()).unwrap();
        for (_, p) in m.classify(&normalize("alpha one"), &[]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_intent_is_an_error() {
        let d = dataset(&[("Only", vec!["hi".into()])]);
        assert!(matches!(
            train_intent_classifier(&d, &Default::default(), &reference()),
            Err(Error::SingleIntent(name)) if name == "Only"
        ));
    }

    #[test]
    fn serde_round_trip() {
        let d = crate::fixtures::smart_lights();
        let m = train_intent_classifier(&d, &Default::default(), &reference()).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: IntentClassifierModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
