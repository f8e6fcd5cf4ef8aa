//! Semi-supervised extraction of scientific keyphrases (Task, Process,
//! Material) as IOBES sequence tagging.
//!
//! The tagger is a character- and word-level bidirectional LSTM feeding a
//! linear-chain CRF. Unlabeled text is exploited by propagating CRF
//! marginals over a k-nearest-neighbor token graph and retraining on
//! confidence-gated lattices that marginalize over uncertain tokens.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod encoder;
mod error;
pub mod eval;
pub mod graph;
pub mod ssl;
pub mod synthetic;

pub use error::{Error, Result};
