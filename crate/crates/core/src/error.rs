use thiserror::Error;

use crate::dataset::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("dataset validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("no parse: {0}")]
    NoParse(String),

    #[error("entity '{entity}' has {count} values, more than the {limit} allowed in a pattern")]
    TooManyAlternations {
        entity: String,
        count: usize,
        limit: usize,
    },

    #[error("intent classifier needs at least two intents, found only '{0}'")]
    SingleIntent(String),

    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,

    #[error("unknown entity '{0}'")]
    UnknownEntity(String),

    #[error("invalid confusion network: {0}")]
    InvalidNetwork(String),

    #[error("reference is empty but hypothesis is not")]
    EmptyReference,

    #[error("intent '{intent}' has {available} utterances, fewer than the {required} required")]
    NotEnoughData {
        intent: String,
        required: usize,
        available: usize,
    },

    #[error("archive format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: String },

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}
