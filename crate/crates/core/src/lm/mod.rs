//! Language models: Katz back-off n-grams and the class-based pattern model.

pub mod class_lm;
pub mod ngram;

pub use class_lm::{
    abstract_patterns, inject_entity_values, perplexity, sample, score_sentence, ClassLm,
    ClassLmConfig, EntityModel, EntityModelKind, PatternCorpus, ScoreMode, Symbol,
};
pub use ngram::NGramModel;
