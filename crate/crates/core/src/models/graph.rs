use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{AdapterPosition, ModelConfig, Topology};
use crate::error::{Error, Result};
use crate::layers::{Attention, Blstm, Embedding, Lstm, OutputLayer, ParamSpec};
use crate::numerics::ParamStore;

/// Named components; each owns every parameter under its prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    SpeechEncoder,
    TextEncoder,
    DecoderSt,
    DecoderAsr,
    CtcHead,
    Adapter,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::SpeechEncoder,
        Component::TextEncoder,
        Component::DecoderSt,
        Component::DecoderAsr,
        Component::CtcHead,
        Component::Adapter,
    ];

    /// Parameter-name prefix, trailing dot included.
    pub fn prefix(self) -> &'static str {
        match self {
            Component::SpeechEncoder => "encoder.",
            Component::TextEncoder => "text_encoder.",
            Component::DecoderSt => "decoder_st.",
            Component::DecoderAsr => "decoder_asr.",
            Component::CtcHead => "ctc_head.",
            Component::Adapter => "adapter.",
        }
    }

    /// Prefix without the trailing dot.
    pub fn stem(self) -> &'static str {
        let p = self.prefix();
        &p[..p.len() - 1]
    }

    /// Component owning `name`, if any.
    pub fn of_param(name: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| name.starts_with(c.prefix()))
    }
}

/// Shape of one attention decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayout {
    pub component: Component,
    /// Output distribution size: every id except the blank.
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub att_dim: usize,
    /// Dimension of the states the main attention reads.
    pub key_dim: usize,
    /// Dimension of the states read by the second attention (triangle only).
    pub key2_dim: Option<usize>,
}

impl DecoderLayout {
    pub fn context_dim(&self) -> usize {
        self.key_dim + self.key2_dim.unwrap_or(0)
    }

    pub fn embedding(&self) -> Embedding {
        Embedding::new(self.component.stem(), self.vocab, self.embed_dim)
    }

    pub fn lstm(&self, k: usize) -> Lstm {
        let input = if k == 0 { self.embed_dim + self.context_dim() } else { self.hidden };
        Lstm::new(format!("{}lstm{k}", self.component.prefix()), input, self.hidden)
    }

    pub fn attention(&self) -> Attention {
        Attention::new(format!("{}att", self.component.prefix()), self.hidden, self.key_dim, self.att_dim)
    }

    pub fn attention2(&self) -> Option<Attention> {
        self.key2_dim
            .map(|k| Attention::new(format!("{}att2", self.component.prefix()), self.hidden, k, self.att_dim))
    }

    pub fn output(&self) -> OutputLayer {
        OutputLayer::new(
            format!("{}out", self.component.prefix()),
            self.embed_dim + self.hidden + self.context_dim(),
            self.vocab,
        )
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.embedding().param_specs();
        for k in 0..self.layers {
            specs.extend(self.lstm(k).param_specs());
        }
        specs.extend(self.attention().param_specs());
        if let Some(a) = self.attention2() {
            specs.extend(a.param_specs());
        }
        specs.extend(self.output().param_specs());
        specs
    }
}

/// A wired model: topology, sizes, current encoder depth and adapter slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub topology: Topology,
    pub config: ModelConfig,
    /// Number of speech-encoder layers currently in use.
    pub enc_depth: usize,
    pub adapter: Option<AdapterPosition>,
}

/// Wires `topology` at the configured full encoder depth, without an adapter.
pub fn build(config: &ModelConfig, topology: Topology) -> Result<ModelGraph> {
    config.validate()?;
    Ok(ModelGraph {
        topology,
        config: config.clone(),
        enc_depth: config.enc_layers,
        adapter: None,
    })
}

impl ModelGraph {
    pub fn components(&self) -> Vec<Component> {
        let t = self.topology;
        let mut out = Vec::new();
        if t.has_speech_encoder() {
            out.push(Component::SpeechEncoder);
        }
        if t.has_text_encoder() {
            out.push(Component::TextEncoder);
        }
        if t.has_asr_decoder() {
            out.push(Component::DecoderAsr);
        }
        if t.has_st_decoder() {
            out.push(Component::DecoderSt);
        }
        if self.has_ctc() {
            out.push(Component::CtcHead);
        }
        if self.adapter.is_some() {
            out.push(Component::Adapter);
        }
        out
    }

    pub fn has_ctc(&self) -> bool {
        self.config.ctc && self.topology.has_speech_encoder()
    }

    /// Number of pools applied after each encoder layer. Pools sit after the
    /// lowest layers; a stack shallower than the pool count puts the
    /// remainder on its top layer, so the output length never depends on depth.
    pub fn pool_schedule(&self) -> Vec<usize> {
        let mut sched = vec![0; self.enc_depth];
        for i in 0..self.config.pools {
            sched[i.min(self.enc_depth - 1)] += 1;
        }
        sched
    }

    pub fn encoder_layer(&self, k: usize) -> Blstm {
        let input = if k == 0 { self.config.feature_dim } else { self.config.enc_output_dim() };
        Blstm::new(&format!("encoder.blstm{k}"), input, self.config.enc_hidden)
    }

    pub fn text_embedding(&self) -> Embedding {
        Embedding::new("text_encoder", self.config.src_vocab_size - 1, self.config.embed_dim)
    }

    pub fn text_encoder_layer(&self, k: usize) -> Blstm {
        let input = if k == 0 { self.config.embed_dim } else { self.config.enc_output_dim() };
        Blstm::new(&format!("text_encoder.blstm{k}"), input, self.config.enc_hidden)
    }

    /// Projection from encoder states to source-vocabulary-plus-blank scores.
    pub fn ctc_head(&self) -> OutputLayer {
        OutputLayer::new("ctc_head", self.config.enc_output_dim(), self.config.src_vocab_size)
    }

    /// Dimension of the states the adapter consumes and reproduces.
    pub fn adapter_dim(&self, position: AdapterPosition) -> usize {
        match position {
            AdapterPosition::EncoderTop => self.config.enc_output_dim(),
            AdapterPosition::AsrDecoderTop => self.config.dec_hidden,
        }
    }

    pub fn adapter_layer(&self) -> Option<Blstm> {
        self.adapter.map(|pos| {
            let d = self.adapter_dim(pos);
            Blstm::new("adapter", d, d / 2)
        })
    }

    fn decoder(&self, component: Component, vocab_size: usize, key_dim: usize, key2_dim: Option<usize>) -> DecoderLayout {
        DecoderLayout {
            component,
            vocab: vocab_size - 1,
            embed_dim: self.config.embed_dim,
            hidden: self.config.dec_hidden,
            layers: self.config.dec_layers,
            att_dim: self.config.att_dim,
            key_dim,
            key2_dim,
        }
    }

    pub fn asr_decoder(&self) -> Option<DecoderLayout> {
        self.topology.has_asr_decoder().then(|| {
            self.decoder(Component::DecoderAsr, self.config.src_vocab_size, self.config.enc_output_dim(), None)
        })
    }

    pub fn st_decoder(&self) -> Option<DecoderLayout> {
        let enc = self.config.enc_output_dim();
        let dec = self.config.dec_hidden;
        let (key, key2) = match self.topology {
            Topology::Asr => return None,
            Topology::TiedCascade => (dec, None),
            Topology::TiedTriangle => (enc, Some(dec)),
            _ => (enc, None),
        };
        Some(self.decoder(Component::DecoderSt, self.config.tgt_vocab_size, key, key2))
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        if self.topology.has_speech_encoder() {
            for k in 0..self.enc_depth {
                specs.extend(self.encoder_layer(k).param_specs());
            }
        }
        if self.topology.has_text_encoder() {
            specs.extend(self.text_embedding().param_specs());
            for k in 0..self.config.text_enc_layers {
                specs.extend(self.text_encoder_layer(k).param_specs());
            }
        }
        if let Some(d) = self.asr_decoder() {
            specs.extend(d.param_specs());
        }
        if let Some(d) = self.st_decoder() {
            specs.extend(d.param_specs());
        }
        if self.has_ctc() {
            specs.extend(self.ctc_head().param_specs());
        }
        if let Some(a) = self.adapter_layer() {
            specs.extend(a.param_specs());
        }
        specs
    }

    /// Fresh store holding every parameter of this graph.
    pub fn init_store(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new(seed);
        self.init_missing(&mut store)?;
        Ok(store)
    }

    /// Adds freshly initialized entries for parameters `store` lacks.
    pub fn init_missing(&self, store: &mut ParamStore) -> Result<Vec<String>> {
        let mut added = Vec::new();
        for s in self.param_specs() {
            if store.init_missing(&s.name, &s.shape, s.init)? {
                added.push(s.name);
            }
        }
        Ok(added)
    }

    /// Checks that `store` holds exactly this graph's parameters with the right shapes.
    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        let specs = self.param_specs();
        for s in &specs {
            match store.get(&s.name) {
                None => return Err(Error::UnknownParam(s.name.clone())),
                Some(t) if t.shape() != s.shape.as_slice() => {
                    return Err(Error::Shape(format!(
                        "{}: store has {:?}, graph needs {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if store.len() != specs.len() {
            let wanted: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra: Vec<&str> = store.names().filter(|n| !wanted.contains(n)).collect();
            return Err(Error::Shape(format!("store has parameters outside the graph: {extra:?}")));
        }
        Ok(())
    }

    /// Grows the speech encoder to `layers` layers. Parameters of existing
    /// layers are untouched; the caller adds the new ones with [`ModelGraph::init_missing`].
    pub fn grow_encoder(&self, layers: usize) -> Result<ModelGraph> {
        if !self.topology.has_speech_encoder() {
            return Err(Error::Config(format!("{} has no speech encoder", self.topology)));
        }
        if layers <= self.enc_depth {
            return Err(Error::Config(format!(
                "encoder growth must add layers: {} -> {layers}",
                self.enc_depth
            )));
        }
        if layers > self.config.enc_layers {
            return Err(Error::Config(format!(
                "cannot grow past the configured {} encoder layers",
                self.config.enc_layers
            )));
        }
        Ok(ModelGraph {
            enc_depth: layers,
            ..self.clone()
        })
    }

    /// Same graph starting from a shallower encoder.
    pub fn with_depth(&self, layers: usize) -> Result<ModelGraph> {
        if layers == 0 || layers > self.config.enc_layers {
            return Err(Error::Config(format!(
                "encoder depth {layers} outside 1..={}",
                self.config.enc_layers
            )));
        }
        Ok(ModelGraph {
            enc_depth: layers,
            ..self.clone()
        })
    }

    /// Inserts an adapter BLSTM at `position`.
    pub fn with_adapter(&self, position: AdapterPosition) -> Result<ModelGraph> {
        if self.topology.adapter_position() != Some(position) {
            return Err(Error::Config(format!(
                "adapter position {} is not valid for {}",
                position.name(),
                self.topology
            )));
        }
        if !self.adapter_dim(position).is_multiple_of(2) {
            return Err(Error::Config("adapter input dimension must be even".into()));
        }
        Ok(ModelGraph {
            adapter: Some(position),
            ..self.clone()
        })
    }
}
