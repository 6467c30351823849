//! Alignment of annotated utterances onto normalized tokens.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::Utterance;
use crate::normalize::{normalize, NormalizedText};

/// An annotated slot expressed as a range of normalized tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSlot {
    pub tokens: Range<usize>,
    /// Character span covered by the slot tokens in the original text.
    pub span: Range<usize>,
    pub entity: String,
    pub slot_name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedUtterance {
    pub nt: NormalizedText,
    pub slots: Vec<AlignedSlot>,
}

/// A slot found by a parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMatch {
    pub slot_name: String,
    pub entity: String,
    pub tokens: Range<usize>,
    pub span: Range<usize>,
    pub raw_value: String,
}

impl SlotMatch {
    pub fn new(nt: &NormalizedText, tokens: Range<usize>, entity: &str, slot_name: &str) -> Self {
        let span = nt.char_span(tokens.clone()).unwrap_or(0..0);
        SlotMatch {
            slot_name: slot_name.to_string(),
            entity: entity.to_string(),
            raw_value: nt.substring(&span),
            tokens,
            span,
        }
    }
}

/// Normalize the full utterance text and assign tokens to slot chunks by
/// their character spans. Slots that cover no token are dropped.
pub fn align_utterance(utterance: &Utterance) -> AlignedUtterance {
    let nt = normalize(&utterance.text());
    let mut slots = Vec::new();
    for slot in utterance.slots() {
        let inside: Vec<usize> = nt
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.span.start >= slot.span.start && t.span.end <= slot.span.end)
            .map(|(i, _)| i)
            .collect();
        let (Some(&first), Some(&last)) = (inside.first(), inside.last()) else {
            continue;
        };
        let tokens = first..last + 1;
        let span = nt.char_span(tokens.clone()).expect("non-empty");
        slots.push(AlignedSlot {
            text: nt.substring(&span),
            tokens,
            span,
            entity: slot.entity.to_string(),
            slot_name: slot.slot_name.to_string(),
        });
    }
    AlignedUtterance { nt, slots }
}

impl AlignedUtterance {
    /// Slots as parser output, for comparison with predictions.
    pub fn slot_matches(&self) -> Vec<SlotMatch> {
        self.slots
            .iter()
            .map(|s| SlotMatch::new(&self.nt, s.tokens.clone(), &s.entity, &s.slot_name))
            .collect()
    }
}
