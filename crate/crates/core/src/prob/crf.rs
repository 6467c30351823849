//! Linear-chain CRF slot filler with BILOU tags.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{apply_dropout, featurize_tokens, FeatureConfig, FeatureResources};
use super::optim::{minimize, LbfgsConfig};
use crate::align::{AlignedUtterance, SlotMatch};
use crate::builtin::BuiltinMatch;
use crate::normalize::NormalizedText;

/// Feature indices active at each position.
pub type Sequence = Vec<Vec<usize>>;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Parameter layout: emissions `[F x K]` (feature-major), transitions
/// `[K x K]` (from-major), start `[K]`, end `[K]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub features: usize,
    pub tags: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.features * self.tags + self.tags * self.tags + 2 * self.tags
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn emission(&self, f: usize, y: usize) -> usize {
        f * self.tags + y
    }

    fn transition(&self, a: usize, b: usize) -> usize {
        self.features * self.tags + a * self.tags + b
    }

    fn start(&self, y: usize) -> usize {
        self.features * self.tags + self.tags * self.tags + y
    }

    fn end(&self, y: usize) -> usize {
        self.start(y) + self.tags
    }
}

fn emissions(theta: &[f64], layout: Layout, seq: &Sequence) -> Vec<Vec<f64>> {
    seq.iter()
        .map(|feats| {
            (0..layout.tags)
                .map(|y| feats.iter().map(|&f| theta[layout.emission(f, y)]).sum())
                .collect()
        })
        .collect()
}

struct Lattice {
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    log_z: f64,
}

fn forward_backward(theta: &[f64], layout: Layout, e: &[Vec<f64>]) -> Lattice {
    let k = layout.tags;
    let t_len = e.len();
    let mut alpha = vec![vec![0.0; k]; t_len];
    let mut beta = vec![vec![0.0; k]; t_len];
    for y in 0..k {
        alpha[0][y] = theta[layout.start(y)] + e[0][y];
    }
    for t in 1..t_len {
        for y in 0..k {
            let prev = &alpha[t - 1];
            alpha[t][y] = e[t][y]
                + log_sum_exp((0..k).map(|a| prev[a] + theta[layout.transition(a, y)]));
        }
    }
    for y in 0..k {
        beta[t_len - 1][y] = theta[layout.end(y)];
    }
    for t in (0..t_len - 1).rev() {
        for y in 0..k {
            let next = &beta[t + 1];
            beta[t][y] = log_sum_exp(
                (0..k).map(|b| theta[layout.transition(y, b)] + e[t + 1][b] + next[b]),
            );
        }
    }
    let log_z = log_sum_exp((0..k).map(|y| alpha[t_len - 1][y] + theta[layout.end(y)]));
    Lattice { alpha, beta, log_z }
}

fn path_score(theta: &[f64], layout: Layout, e: &[Vec<f64>], tags: &[usize]) -> f64 {
    let mut score = theta[layout.start(tags[0])] + theta[layout.end(tags[tags.len() - 1])];
    for (t, &y) in tags.iter().enumerate() {
        score += e[t][y];
        if t > 0 {
            score += theta[layout.transition(tags[t - 1], y)];
        }
    }
    score
}

/// Regularized conditional log-likelihood `sum log p(y|x) - lambda/2 |theta|^2`
/// and its gradient (empirical minus expected counts minus `lambda * theta`).
pub fn crf_loglik_and_grad(
    theta: &[f64],
    layout: Layout,
    data: &[(Sequence, Vec<usize>)],
    lambda: f64,
) -> (f64, Vec<f64>) {
    let k = layout.tags;
    let mut grad: Vec<f64> = theta.iter().map(|w| -lambda * w).collect();
    let mut loglik = -0.5 * lambda * theta.iter().map(|w| w * w).sum::<f64>();
    for (seq, tags) in data {
        if seq.is_empty() {
            continue;
        }
        let e = emissions(theta, layout, seq);
        let lat = forward_backward(theta, layout, &e);
        loglik += path_score(theta, layout, &e, tags) - lat.log_z;

        grad[layout.start(tags[0])] += 1.0;
        grad[layout.end(tags[tags.len() - 1])] += 1.0;
        for (t, &y) in tags.iter().enumerate() {
            for &f in &seq[t] {
                grad[layout.emission(f, y)] += 1.0;
            }
            if t > 0 {
                grad[layout.transition(tags[t - 1], y)] += 1.0;
            }
        }

        let t_len = seq.len();
        for t in 0..t_len {
            for y in 0..k {
                let p = (lat.alpha[t][y] + lat.beta[t][y] - lat.log_z).exp();
                for &f in &seq[t] {
                    grad[layout.emission(f, y)] -= p;
                }
                if t == 0 {
                    grad[layout.start(y)] -= p;
                }
                if t + 1 == t_len {
                    grad[layout.end(y)] -= p;
                }
            }
            if t > 0 {
                for a in 0..k {
                    for b in 0..k {
                        let p = (lat.alpha[t - 1][a]
                            + theta[layout.transition(a, b)]
                            + e[t][b]
                            + lat.beta[t][b]
                            - lat.log_z)
                            .exp();
                        grad[layout.transition(a, b)] -= p;
                    }
                }
            }
        }
    }
    (loglik, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crf {
    pub tags: Vec<String>,
    pub features: BTreeMap<String, usize>,
    pub theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CrfFile {
    tags: Vec<String>,
    emissions: BTreeMap<String, BTreeMap<String, f64>>,
    transitions: BTreeMap<String, BTreeMap<String, f64>>,
}

const START: &str = "<s>";
const END: &str = "</s>";

impl Serialize for Crf {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let layout = self.layout();
        let row = |f: &dyn Fn(usize) -> f64| -> BTreeMap<String, f64> {
            self.tags.iter().enumerate().map(|(y, t)| (t.clone(), f(y))).collect()
        };
        let emissions = self
            .features
            .iter()
            .map(|(name, &j)| (name.clone(), row(&|y| self.theta[layout.emission(j, y)])))
            .collect();
        let mut transitions: BTreeMap<String, BTreeMap<String, f64>> = self
            .tags
            .iter()
            .enumerate()
            .map(|(a, tag)| (tag.clone(), row(&|b| self.theta[layout.transition(a, b)])))
            .collect();
        transitions.insert(START.into(), row(&|y| self.theta[layout.start(y)]));
        for (y, tag) in self.tags.iter().enumerate() {
            transitions
                .get_mut(tag)
                .expect("tag row")
                .insert(END.into(), self.theta[layout.end(y)]);
        }
        CrfFile {
            tags: self.tags.clone(),
            emissions,
            transitions,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Crf {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let file = CrfFile::deserialize(d)?;
        let features: BTreeMap<String, usize> = file
            .emissions
            .keys()
            .enumerate()
            .map(|(j, n)| (n.clone(), j))
            .collect();
        let layout = Layout {
            features: features.len(),
            tags: file.tags.len(),
        };
        let mut theta = vec![0.0; layout.len()];
        let get = |row: Option<&BTreeMap<String, f64>>, col: &str| {
            row.and_then(|r| r.get(col))
                .copied()
                .ok_or_else(|| D::Error::custom(format!("missing crf weight for {col}")))
        };
        for (j, row) in file.emissions.values().enumerate() {
            for (y, tag) in file.tags.iter().enumerate() {
                theta[layout.emission(j, y)] = get(Some(row), tag)?;
            }
        }
        for (a, from) in file.tags.iter().enumerate() {
            let row = file.transitions.get(from);
            for (b, to) in file.tags.iter().enumerate() {
                theta[layout.transition(a, b)] = get(row, to)?;
            }
            theta[layout.end(a)] = get(row, END)?;
            theta[layout.start(a)] = get(file.transitions.get(START), from)?;
        }
        Ok(Crf {
            tags: file.tags,
            features,
            theta,
        })
    }
}

impl Crf {
    pub fn layout(&self) -> Layout {
        Layout {
            features: self.features.len(),
            tags: self.tags.len(),
        }
    }

    /// Map feature strings to known indices, ignoring unseen ones.
    pub fn index(&self, features: &[Vec<String>]) -> Sequence {
        features
            .iter()
            .map(|fs| fs.iter().filter_map(|f| self.features.get(f).copied()).collect())
            .collect()
    }

    pub fn loglik_and_grad(&self, data: &[(Sequence, Vec<usize>)], lambda: f64) -> (f64, Vec<f64>) {
        crf_loglik_and_grad(&self.theta, self.layout(), data, lambda)
    }

    /// Unnormalized score of a tag path.
    pub fn score(&self, seq: &Sequence, tags: &[usize]) -> f64 {
        let e = emissions(&self.theta, self.layout(), seq);
        path_score(&self.theta, self.layout(), &e, tags)
    }

    /// Per-position posterior tag marginals.
    pub fn marginals(&self, seq: &Sequence) -> Vec<Vec<f64>> {
        if seq.is_empty() {
            return Vec::new();
        }
        let layout = self.layout();
        let e = emissions(&self.theta, layout, seq);
        let lat = forward_backward(&self.theta, layout, &e);
        (0..seq.len())
            .map(|t| {
                (0..layout.tags)
                    .map(|y| (lat.alpha[t][y] + lat.beta[t][y] - lat.log_z).exp())
                    .collect()
            })
            .collect()
    }

    /// Highest-scoring tag path and its score.
    pub fn viterbi(&self, seq: &Sequence) -> (Vec<usize>, f64) {
        if seq.is_empty() {
            return (Vec::new(), 0.0);
        }
        let layout = self.layout();
        let k = layout.tags;
        let e = emissions(&self.theta, layout, seq);
        let mut delta = vec![vec![0.0; k]; seq.len()];
        let mut back = vec![vec![0usize; k]; seq.len()];
        for y in 0..k {
            delta[0][y] = self.theta[layout.start(y)] + e[0][y];
        }
        for t in 1..seq.len() {
            for y in 0..k {
                let (best, score) = (0..k)
                    .map(|a| (a, delta[t - 1][a] + self.theta[layout.transition(a, y)]))
                    .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
                delta[t][y] = score + e[t][y];
                back[t][y] = best;
            }
        }
        let last = seq.len() - 1;
        let (mut y, score) = (0..k)
            .map(|y| (y, delta[last][y] + self.theta[layout.end(y)]))
            .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let mut path = vec![0; seq.len()];
        for t in (0..seq.len()).rev() {
            path[t] = y;
            y = back[t][y];
        }
        (path, score)
    }
}

/// Tag names for a set of slot names: `O`, then B/I/L/U per slot.
pub fn tagset(slot_names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut tags = vec!["O".to_string()];
    for slot in slot_names {
        for prefix in ["B", "I", "L", "U"] {
            tags.push(format!("{prefix}-{slot}"));
        }
    }
    tags
}

fn split_tag(tag: &str) -> Option<(char, &str)> {
    let (prefix, slot) = tag.split_once('-')?;
    Some((prefix.chars().next()?, slot))
}

/// BILOU labels for an aligned utterance.
pub fn gold_tags(aligned: &AlignedUtterance, tags: &[String]) -> Vec<usize> {
    let index = |name: String| tags.iter().position(|t| *t == name).unwrap_or(0);
    let mut out = vec![0; aligned.nt.len()];
    for s in &aligned.slots {
        let r = &s.tokens;
        for i in r.clone() {
            let prefix = if r.len() == 1 {
                "U"
            } else if i == r.start {
                "B"
            } else if i + 1 == r.end {
                "L"
            } else {
                "I"
            };
            out[i] = index(format!("{prefix}-{}", s.slot_name));
        }
    }
    out
}

/// Turn a possibly invalid BILOU sequence into slot spans.
///
/// Repair rules: an I with no open span of its slot starts one (as B); an L
/// with no open span is a unit span (as U); an O, a tag of another slot, or
/// the end of the sequence closes any open span at the previous token.
pub fn decode_spans(tags: &[&str]) -> Vec<(std::ops::Range<usize>, String)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    let close = |open: &mut Option<(usize, String)>, end: usize, spans: &mut Vec<_>| {
        if let Some((start, slot)) = open.take() {
            spans.push((start..end, slot));
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        let Some((prefix, slot)) = split_tag(tag) else {
            close(&mut open, i, &mut spans);
            continue;
        };
        let continues = open.as_ref().is_some_and(|(_, s)| s == slot);
        match prefix {
            'I' if continues => {}
            'L' if continues => close(&mut open, i + 1, &mut spans),
            'B' | 'I' => {
                close(&mut open, i, &mut spans);
                open = Some((i, slot.to_string()));
            }
            _ => {
                close(&mut open, i, &mut spans);
                spans.push((i..i + 1, slot.to_string()));
            }
        }
    }
    close(&mut open, tags.len(), &mut spans);
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfTrainingConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for CrfTrainingConfig {
    fn default() -> Self {
        CrfTrainingConfig {
            lambda: 0.1,
            max_iterations: 300,
            gradient_tolerance: 1e-4,
        }
    }
}

/// Per-intent slot filler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFillerModel {
    pub intent: String,
    /// Slot name -> entity name.
    pub slot_entities: BTreeMap<String, String>,
    pub lambda: f64,
    /// `None` when the intent has no slots.
    pub crf: Option<Crf>,
}

fn seed_for(seed: u64, intent: &str) -> u64 {
    intent
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64 ^ seed, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn strings(features: Vec<Vec<(super::features::FeatureFamily, String)>>) -> Vec<Vec<String>> {
    features
        .into_iter()
        .map(|fs| fs.into_iter().map(|(_, n)| n).collect())
        .collect()
}

/// Train one intent's slot filler. `examples` pairs each aligned training
/// utterance with the builtin matches used for its features.
pub fn train_slot_filler(
    intent: &str,
    slot_entities: BTreeMap<String, String>,
    examples: &[(AlignedUtterance, Vec<BuiltinMatch>)],
    features: &FeatureConfig,
    training: &CrfTrainingConfig,
    resources: &FeatureResources,
) -> SlotFillerModel {
    if slot_entities.is_empty() {
        return SlotFillerModel {
            intent: intent.to_string(),
            slot_entities,
            lambda: training.lambda,
            crf: None,
        };
    }
    let tags = tagset(slot_entities.keys().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(features.seed, intent));
    let mut featurized = Vec::with_capacity(examples.len());
    for (aligned, matches) in examples {
        let mut f = featurize_tokens(&aligned.nt, matches, features, resources);
        apply_dropout(&mut f, features, &mut rng);
        featurized.push((strings(f), gold_tags(aligned, &tags)));
    }
    let mut vocabulary = BTreeMap::new();
    for (f, _) in &featurized {
        for name in f.iter().flatten() {
            vocabulary.entry(name.clone()).or_insert(0);
        }
    }
    for (j, v) in vocabulary.values_mut().enumerate() {
        *v = j;
    }
    let mut crf = Crf {
        tags,
        features: vocabulary,
        theta: Vec::new(),
    };
    let layout = crf.layout();
    let data: Vec<(Sequence, Vec<usize>)> = featurized
        .iter()
        .map(|(f, y)| (crf.index(f), y.clone()))
        .collect();
    let cfg = LbfgsConfig {
        max_iterations: training.max_iterations,
        gradient_tolerance: training.gradient_tolerance,
        history: 10,
    };
    let result = minimize(
        |theta, grad| {
            let (ll, g) = crf_loglik_and_grad(theta, layout, &data, training.lambda);
            grad.iter_mut().zip(g).for_each(|(a, b)| *a = -b);
            -ll
        },
        vec![0.0; layout.len()],
        &cfg,
    );
    log::debug!(
        "slot filler {intent}: {} iterations, converged={}",
        result.iterations,
        result.converged
    );
    crf.theta = result.x;
    SlotFillerModel {
        intent: intent.to_string(),
        slot_entities,
        lambda: training.lambda,
        crf: Some(crf),
    }
}

impl SlotFillerModel {
    /// Viterbi-decode slots. Slots of non-extensible custom entities whose
    /// value is not in the gazetteer are dropped.
    pub fn fill_slots(
        &self,
        nt: &NormalizedText,
        matches: &[BuiltinMatch],
        features: &FeatureConfig,
        resources: &FeatureResources,
    ) -> Vec<SlotMatch> {
        let Some(crf) = &self.crf else {
            return Vec::new();
        };
        if nt.is_empty() {
            return Vec::new();
        }
        let seq = crf.index(&strings(featurize_tokens(nt, matches, features, resources)));
        let (path, _) = crf.viterbi(&seq);
        let tags: Vec<&str> = path.iter().map(|&y| crf.tags[y].as_str()).collect();
        let words = nt.texts();
        decode_spans(&tags)
            .into_iter()
            .filter_map(|(range, slot)| {
                let entity = self.slot_entities.get(&slot)?;
                if let Some(g) = resources.gazetteers.get(entity) {
                    if !g.automatically_extensible && !g.contains(&words[range.clone()]) {
                        return None;
                    }
                }
                Some(SlotMatch::new(nt, range, entity, &slot))
            })
            .collect()
    }
}

pub fn fill_slots(
    model: &SlotFillerModel,
    nt: &NormalizedText,
    matches: &[BuiltinMatch],
    features: &FeatureConfig,
    resources: &FeatureResources,
) -> Vec<SlotMatch> {
    model.fill_slots(nt, matches, features, resources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_theta(layout: Layout, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn fixture() -> (Layout, Vec<(Sequence, Vec<usize>)>) {
        let layout = Layout { features: 4, tags: 5 };
        let data = vec![
            (vec![vec![0, 1], vec![2], vec![1, 3]], vec![0, 1, 3]),
            (vec![vec![3], vec![0, 2]], vec![4, 0]),
        ];
        (layout, data)
    }

    #[test]
    fn uniform_model_loglik() {
        let layout = Layout { features: 3, tags: 5 };
        let data = vec![(vec![vec![0], vec![1, 2], vec![2], vec![0]], vec![0, 2, 3, 1])];
        let (ll, _) = crf_loglik_and_grad(&vec![0.0; layout.len()], layout, &data, 0.1);
        assert!((ll + 4.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (layout, data) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_theta(layout, &mut rng);
        let (_, grad) = crf_loglik_and_grad(&theta, layout, &data, 0.1);
        let h = 1e-5;
        for j in 0..layout.len() {
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            let numeric = (crf_loglik_and_grad(&plus, layout, &data, 0.1).0
                - crf_loglik_and_grad(&minus, layout, &data, 0.1).0)
                / (2.0 * h);
            let denom = grad[j].abs().max(numeric.abs()).max(1e-8);
            assert!((grad[j] - numeric).abs() / denom < 1e-4, "param {j}: {} vs {numeric}", grad[j]);
        }
    }

    #[test]
    fn duplicated_data_doubles_data_terms() {
        let (layout, data) = fixture();
        let theta = random_theta(layout, &mut ChaCha8Rng::seed_from_u64(9));
        let (ll1, g1) = crf_loglik_and_grad(&theta, layout, &data, 0.0);
        let doubled: Vec<_> = data.iter().chain(data.iter()).cloned().collect();
        let (ll2, g2) = crf_loglik_and_grad(&theta, layout, &doubled, 0.0);
        assert!((ll2 - 2.0 * ll1).abs() < 1e-9);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - 2.0 * a).abs() < 1e-9);
        }
    }

    #[test]
    fn marginals_normalize_and_viterbi_dominates() {
        let (layout, data) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let crf = Crf {
            tags: (0..layout.tags).map(|i| format!("t{i}")).collect(),
            features: (0..layout.features).map(|i| (format!("f{i}"), i)).collect(),
            theta: random_theta(layout, &mut rng),
        };
        let seq = &data[0].0;
        for row in crf.marginals(seq) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
        let (path, best) = crf.viterbi(seq);
        assert!((crf.score(seq, &path) - best).abs() < 1e-12);
        for _ in 0..1000 {
            let tags: Vec<usize> = (0..seq.len()).map(|_| rng.gen_range(0..layout.tags)).collect();
            assert!(best >= crf.score(seq, &tags) - 1e-12);
        }
    }

    #[test]
    fn serde_round_trip() {
        let (layout, _) = fixture();
        let crf = Crf {
            tags: tagset(["room".to_string()]),
            features: (0..layout.features).map(|i| (format!("f{i}"), i)).collect(),
            theta: random_theta(layout, &mut ChaCha8Rng::seed_from_u64(2)),
        };
        let json = serde_json::to_string(&crf).unwrap();
        assert!(json.contains("\"<s>\""));
        let back: Crf = serde_json::from_str(&json).unwrap();
        assert_eq!(back, crf);
    }

    #[test]
    fn repair_rules() {
        let spans = |tags: &[&str]| decode_spans(tags);
        assert_eq!(spans(&["O", "B-a", "I-a", "L-a"]), vec![(1..4, "a".into())]);
        assert_eq!(spans(&["I-a", "L-a"]), vec![(0..2, "a".into())]);
        assert_eq!(spans(&["O", "L-a"]), vec![(1..2, "a".into())]);
        assert_eq!(spans(&["B-a", "O", "L-a"]), vec![(0..1, "a".into()), (2..3, "a".into())]);
        assert_eq!(spans(&["B-a", "U-b"]), vec![(0..1, "a".into()), (1..2, "b".into())]);
        assert_eq!(spans(&["B-a", "I-a"]), vec![(0..2, "a".into())]);
        assert!(spans(&["O", "O"]).is_empty());
    }
}
