//! Building blocks for multi-reference citation text generation: corpus
//! ingest, dataset construction, knowledge-graph triplets, prompt rendering,
//! text metrics, and quantization/optimizer numerics.

pub mod corpus;
pub mod dataset;
pub mod error;
pub mod jsonl;
pub mod kg;
pub mod metrics;
pub mod numerics;
pub mod prompt;

pub use error::{Error, Result};

/// Recorded in every artifact manifest.
pub const BUILDER_VERSION: &str = concat!("citegen-core/", env!("CARGO_PKG_VERSION"));
