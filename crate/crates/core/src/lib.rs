//! Spectrum foundation-model toolkit.
//!
//! Parses tandem mass spectra, embeds them with a transformer peak encoder,
//! trains task heads and baselines for downstream classification tasks,
//! fine-tunes the encoder jointly with a de novo sequencing loss, and
//! evaluates with ROC/PR/F1/PCA. A deterministic synthetic fragmentation
//! generator supplies labeled data for desk-scale experiments.

pub mod baselines;
mod binio;
mod blocks;
pub mod chem;
pub mod config;
pub mod denovo;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod msio;
pub mod nn;
pub mod preprocess;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
