//! Per-token CRF features.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clusters::ClusterLexicon;
use crate::builtin::{extract_builtin, BuiltinKind, BuiltinMatch, ReferenceTime};
use crate::dataset::{Dataset, EntityDef};
use crate::normalize::NormalizedText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    Word,
    Shape,
    Affix,
    Cluster,
    Builtin,
    Gazetteer,
    Bias,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 7] = [
        FeatureFamily::Word,
        FeatureFamily::Shape,
        FeatureFamily::Affix,
        FeatureFamily::Cluster,
        FeatureFamily::Builtin,
        FeatureFamily::Gazetteer,
        FeatureFamily::Bias,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Inclusive token offsets for windowed features.
    pub window: (i32, i32),
    /// Probability of erasing a feature template for a whole training example.
    pub dropout: BTreeMap<FeatureFamily, f64>,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: (-2, 2),
            dropout: [(FeatureFamily::Gazetteer, 0.5), (FeatureFamily::Cluster, 0.2)]
                .into_iter()
                .collect(),
            seed: 42,
        }
    }
}

impl FeatureConfig {
    pub fn dropout_of(&self, family: FeatureFamily) -> f64 {
        self.dropout.get(&family).copied().unwrap_or(0.0)
    }
}

/// Known token sequences of a custom entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gazetteer {
    pub values: BTreeSet<Vec<String>>,
    pub automatically_extensible: bool,
}

impl Gazetteer {
    pub fn new(values: impl IntoIterator<Item = String>, automatically_extensible: bool) -> Self {
        Gazetteer {
            values: values
                .into_iter()
                .map(|v| v.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .filter(|v| !v.is_empty())
                .collect(),
            automatically_extensible,
        }
    }

    pub fn contains(&self, words: &[&str]) -> bool {
        self.values
            .iter()
            .any(|v| v.len() == words.len() && v.iter().zip(words).all(|(a, b)| a == b))
    }

    fn max_len(&self) -> usize {
        self.values.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Greedy leftmost-longest matches as token ranges.
    pub fn find(&self, words: &[&str]) -> Vec<Range<usize>> {
        let max = self.max_len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=max.min(words.len() - i))
                .rev()
                .find(|&len| self.contains(&words[i..i + len]));
            match longest {
                Some(len) => {
                    out.push(i..i + len);
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Lexical resources consumed by the feature extractor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureResources {
    pub gazetteers: BTreeMap<String, Gazetteer>,
    pub clusters: Vec<ClusterLexicon>,
}

impl FeatureResources {
    /// One gazetteer per custom entity, plus the given cluster lexicons.
    pub fn from_dataset(d: &Dataset, clusters: Vec<ClusterLexicon>) -> Self {
        let gazetteers = d
            .entities
            .iter()
            .filter_map(|(name, def)| match def {
                EntityDef::Custom(c) => Some((
                    name.clone(),
                    Gazetteer::new(d.entity_values(name), c.automatically_extensible),
                )),
                EntityDef::Builtin { .. } => None,
            })
            .collect();
        FeatureResources {
            gazetteers,
            clusters,
        }
    }
}

pub type TokenFeatures = Vec<(FeatureFamily, String)>;

/// Builtin matches of each kind extracted independently, so a token may be
/// covered by several kinds at once.
pub fn per_kind_builtin_matches(nt: &NormalizedText, reference: &ReferenceTime) -> Vec<BuiltinMatch> {
    BuiltinKind::ALL
        .iter()
        .flat_map(|&k| extract_builtin(nt, &BTreeSet::from([k]), reference))
        .collect()
}

fn bilou(range: &Range<usize>, i: usize) -> char {
    if range.len() == 1 {
        'U'
    } else if i == range.start {
        'B'
    } else if i + 1 == range.end {
        'L'
    } else {
        'I'
    }
}

/// Collapsed character-class shape of a surface string ("Kitchen" -> "Xx").
pub fn shape(surface: &str) -> String {
    let mut out = String::new();
    for c in surface.chars() {
        let class = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_ascii_digit() {
            'd'
        } else {
            c
        };
        if !out.ends_with(class) {
            out.push(class);
        }
    }
    out
}

fn offset_name(base: &str, offset: i32) -> String {
    if offset == 0 {
        base.to_string()
    } else {
        format!("{base}[{offset}]")
    }
}

/// Feature strings (`template=value`) for every token.
pub fn featurize_tokens(
    nt: &NormalizedText,
    matches: &[BuiltinMatch],
    cfg: &FeatureConfig,
    resources: &FeatureResources,
) -> Vec<TokenFeatures> {
    let words = nt.texts();
    let n = words.len();
    let mut out: Vec<TokenFeatures> = vec![Vec::new(); n];
    let offsets: Vec<i32> = (cfg.window.0..=cfg.window.1).collect();
    let at = |i: usize, o: i32| {
        let j = i as i64 + o as i64;
        (0..n as i64).contains(&j).then_some(j as usize)
    };

    let mut builtin_tags: Vec<Vec<(BuiltinKind, char)>> = vec![Vec::new(); n];
    for m in matches {
        for i in m.tokens.clone() {
            builtin_tags[i].push((m.kind, bilou(&m.tokens, i)));
        }
    }
    let mut gazetteer_tags: Vec<Vec<(&str, char)>> = vec![Vec::new(); n];
    for (entity, gazetteer) in &resources.gazetteers {
        for range in gazetteer.find(&words) {
            for i in range.clone() {
                gazetteer_tags[i].push((entity, bilou(&range, i)));
            }
        }
    }

    for (i, features) in out.iter_mut().enumerate() {
        let word = words[i];
        for &o in &offsets {
            if let Some(j) = at(i, o) {
                features.push((
                    FeatureFamily::Word,
                    format!("{}={}", offset_name("w", o), words[j]),
                ));
                for &(kind, tag) in &builtin_tags[j] {
                    let base = format!("{}_builtin", kind.short_name());
                    features.push((FeatureFamily::Builtin, format!("{}={tag}", offset_name(&base, o))));
                }
            }
        }
        let surface = nt.substring(&nt.tokens[i].span);
        features.push((FeatureFamily::Shape, format!("shape={}", shape(&surface))));
        let chars: Vec<char> = word.chars().collect();
        for len in 1..=3.min(chars.len()) {
            let prefix: String = chars[..len].iter().collect();
            let suffix: String = chars[chars.len() - len..].iter().collect();
            features.push((FeatureFamily::Affix, format!("prefix{len}={prefix}")));
            features.push((FeatureFamily::Affix, format!("suffix{len}={suffix}")));
        }
        for lexicon in &resources.clusters {
            if let Some(id) = lexicon.get(word) {
                features.push((FeatureFamily::Cluster, format!("cluster_{}={id}", lexicon.name)));
            }
        }
        for &(entity, tag) in &gazetteer_tags[i] {
            features.push((FeatureFamily::Gazetteer, format!("{entity}_entity={tag}")));
        }
        features.push((FeatureFamily::Bias, "bias".to_string()));
    }
    out
}

fn template(feature: &str) -> &str {
    feature.split_once('=').map_or(feature, |(t, _)| t)
}

/// Erase whole feature templates from one example, each with its family's
/// dropout probability. Templates are visited in sorted order so the result
/// depends only on the rng state.
pub fn apply_dropout(features: &mut [TokenFeatures], cfg: &FeatureConfig, rng: &mut ChaCha8Rng) {
    let templates: BTreeSet<(FeatureFamily, String)> = features
        .iter()
        .flatten()
        .map(|(family, name)| (*family, template(name).to_string()))
        .collect();
    let mut erased = BTreeSet::new();
    for (family, name) in templates {
        let p = cfg.dropout_of(family);
        if p > 0.0 && rng.gen::<f64>() < p {
            erased.insert(name);
        }
    }
    if erased.is_empty() {
        return;
    }
    for token in features.iter_mut() {
        token.retain(|(_, name)| !erased.contains(template(name)));
    }
}
