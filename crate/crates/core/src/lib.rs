//! Answer-aware multi-hop question generation with relevance-biased
//! cross-attention.
//!
//! A small encoder–decoder reads `context ⊕ <sep> ⊕ answer` and writes a
//! question. Every decoder layer adds a per-source-token relevance vector to
//! its cross-attention scores. The vector mixes exact answer-span tags with
//! the start/end distributions of an extractive span predictor.

pub mod attention;
pub mod cli;
pub mod data;
pub mod decoding;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod qa;
pub mod relevance;

pub use error::{Error, Result};
