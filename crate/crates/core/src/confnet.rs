//! Confusion networks: greedy decoding, OOV substitution, confidence and WER.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for the empty (NULL) hypothesis of a segment.
pub const NULL_ARC: &str = "<eps>";
pub const OOV: &str = "<oov>";
pub const DEFAULT_OOV_THRESHOLD: f64 = 0.5;
const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub word: String,
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionNetwork {
    pub segments: Vec<Vec<Hypothesis>>,
}

impl ConfusionNetwork {
    pub fn from_json(text: &str) -> Result<Self> {
        let cn: ConfusionNetwork = serde_json::from_str(text)?;
        cn.validate()?;
        Ok(cn)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, segment) in self.segments.iter().enumerate() {
            if segment.is_empty() {
                return Err(Error::InvalidNetwork(format!("segment {i} is empty")));
            }
            if segment.iter().filter(|h| h.word == NULL_ARC).count() > 1 {
                return Err(Error::InvalidNetwork(format!("segment {i} has several NULL arcs")));
            }
            if let Some(h) = segment
                .iter()
                .find(|h| !(0.0..=1.0).contains(&h.posterior) || h.word.is_empty())
            {
                return Err(Error::InvalidNetwork(format!(
                    "segment {i}: bad hypothesis '{}' with posterior {}",
                    h.word, h.posterior
                )));
            }
            let total: f64 = segment.iter().map(|h| h.posterior).sum();
            if (total - 1.0).abs() > TOLERANCE {
                return Err(Error::InvalidNetwork(format!(
                    "segment {i}: posteriors sum to {total}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedWord {
    pub token: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedUtterance {
    pub words: Vec<DecodedWord>,
    pub sentence_confidence: f64,
}

impl DecodedUtterance {
    pub fn text(&self) -> String {
        self.words
            .iter()
            .map(|w| w.token.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Sentence confidence multiplied by an intent probability.
    pub fn combined_confidence(&self, intent_probability: f64) -> f64 {
        self.sentence_confidence * intent_probability
    }
}

/// Geometric mean computed in log space; 1 for an empty list.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let mean_log = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    mean_log.exp()
}

/// Most probable hypothesis per segment; ties go to the smallest word.
pub fn greedy_decode(cn: &ConfusionNetwork) -> Result<DecodedUtterance> {
    greedy_decode_with(cn, false)
}

/// As [`greedy_decode`]; with `include_null`, chosen NULL arcs also count
/// toward the sentence confidence.
pub fn greedy_decode_with(cn: &ConfusionNetwork, include_null: bool) -> Result<DecodedUtterance> {
    cn.validate()?;
    let mut words = Vec::new();
    let mut confidences = Vec::new();
    for segment in &cn.segments {
        let best = segment
            .iter()
            .reduce(|best, h| {
                if h.posterior > best.posterior
                    || (h.posterior == best.posterior && h.word < best.word)
                {
                    h
                } else {
                    best
                }
            })
            .expect("validated segment is non-empty");
        if best.word == NULL_ARC {
            if include_null {
                confidences.push(best.posterior);
            }
            continue;
        }
        confidences.push(best.posterior);
        words.push(DecodedWord {
            token: best.word.clone(),
            confidence: best.posterior,
        });
    }
    Ok(DecodedUtterance {
        words,
        sentence_confidence: geometric_mean(&confidences),
    })
}

/// Replace words below `theta` by `<oov>`; confidences are kept.
pub fn apply_oov_threshold(du: &DecodedUtterance, theta: f64) -> DecodedUtterance {
    DecodedUtterance {
        words: du
            .words
            .iter()
            .map(|w| DecodedWord {
                token: if w.confidence < theta { OOV.to_string() } else { w.token.clone() },
                confidence: w.confidence,
            })
            .collect(),
        sentence_confidence: du.sentence_confidence,
    }
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diagonal = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let substitute = diagonal + usize::from(x != y);
            diagonal = row[j + 1];
            row[j + 1] = substitute.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// Levenshtein distance over tokens divided by the reference length.
pub fn word_error_rate<T: AsRef<str>>(hyp: &[T], reference: &[T]) -> Result<f64> {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    if r.is_empty() {
        return if h.is_empty() { Ok(0.0) } else { Err(Error::EmptyReference) };
    }
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}
