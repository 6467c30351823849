//! Probabilistic parser: intent classification and per-intent CRF slot filling.

pub mod clusters;
pub mod crf;
pub mod features;
pub mod intent;
pub mod optim;
