//! Building blocks of the attention encoder-decoder: embeddings, (B)LSTMs,
//! temporal max-pooling, additive attention with alignment feedback, the
//! output projection, dropout and label-smoothed cross-entropy.

mod attention;
mod dropout;
mod lstm;
mod output;
mod pool;

pub use attention::{additive_attention, Attention, AttentionState, AttentionVars, Memory};
pub use dropout::dropout;
pub use lstm::{blstm, lstm_step, Blstm, BlstmVars, Lstm, LstmVars};
pub use output::{
    embed, label_smoothed_ce, smoothed_target, Embedding, OutputLayer, OutputVars, SmoothedCe,
};
pub use pool::{max_pool_time, pooled_length};

use crate::error::Result;
use crate::numerics::{InitScheme, ParamStore};

/// Declared parameter: name, shape and how to initialize it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitScheme,
}

impl ParamSpec {
    pub fn weight(name: String, shape: Vec<usize>) -> Self {
        ParamSpec {
            name,
            shape,
            init: InitScheme::UniformFanIn,
        }
    }

    pub fn bias(name: String, len: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![len],
            init: InitScheme::Zeros,
        }
    }
}

/// Adds every missing parameter in `specs` to `store`.
pub fn init_params(store: &mut ParamStore, specs: &[ParamSpec]) -> Result<()> {
    for s in specs {
        store.init_missing(&s.name, &s.shape, s.init)?;
    }
    Ok(())
}
