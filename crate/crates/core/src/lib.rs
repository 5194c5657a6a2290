//! Sketch-based natural-language-to-SQL model, built from scratch.
//!
//! A question and a table schema go in; a SQL sketch (select column,
//! aggregator, WHERE conditions) comes out. The model combines word- and
//! character-CNN embeddings, bi-directional LSTM encoders, a bi-directional
//! attention mechanism between question and columns, four prediction heads
//! with a pointer-network value decoder, and trains end to end on a small
//! reverse-mode autodiff tensor core with finite-difference verification.

pub mod attn;
pub mod ckpt;
pub mod embed;
pub mod error;
pub mod heads;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod params;
pub mod sql;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Deterministic RNG used for initialization, shuffling, and dropout.
pub type TrainRng = rand_chacha::ChaCha8Rng;
