//! End-to-end speech translation at desk scale.
//!
//! Attention encoder-decoder models over synthetic speech features: the direct
//! model, four multi-task topologies, an auxiliary CTC loss, component
//! transplant from pre-trained ASR/MT checkpoints (with an optional adapter
//! layer), beam search, and BLEU/TER/WER scoring.

pub mod ctc;
pub mod data;
pub mod decode_eval;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod models;
pub mod numerics;
pub mod transplant;

pub use error::{Error, Result};
