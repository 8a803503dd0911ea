//! Topology wiring and the combined training losses.

mod config;
mod forward;
mod graph;
mod network;

pub use config::{AdapterPosition, ModelConfig, Topology};
pub use forward::{
    accumulate_example, evaluate_batch, evaluate_example, intermediate_max_len, ExampleResult, Forward, ForwardOptions,
    LossBreakdown, Mode, TokenCounts,
};
pub use graph::{build, Component, DecoderLayout, ModelGraph};
pub use network::{
    best_token, is_emittable, DecoderMemory, DecoderState, DecoderVars, Dropout, Network, Prediction,
    TeacherForced,
};

#[cfg(test)]
mod tests;
