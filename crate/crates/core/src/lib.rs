//! Offline spoken language understanding toolkit.
//!
//! Dataset handling, text normalization, builtin entity extraction,
//! deterministic and CRF-based parsing, a class-based n-gram language model,
//! confusion-network scoring, and evaluation harnesses.

pub mod align;
pub mod archive;
pub mod builtin;
pub mod confnet;
pub mod dataset;
pub mod deterministic;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod lm;
pub mod normalize;
pub mod prob;
pub mod synthetic;

pub use error::{Error, Result};
