use rand_chacha::ChaCha8Rng;

use super::config::{AdapterPosition, ModelConfig, Topology};
use super::graph::{DecoderLayout, ModelGraph};
use crate::ctc::ctc_loss_var;
use crate::data::{FeatureSequence, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::layers::{
    additive_attention, blstm, dropout, embed, lstm_step, max_pool_time, smoothed_target, AttentionVars,
    BlstmVars, LstmVars, Memory, OutputVars,
};
use crate::numerics::{name_rng, ParamStore, Tape, Var};

/// Dropout applied by one component, with its own random stream.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    /// Inference mode: identity.
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    /// Training mode, stream derived from `seed` and `component`.
    pub fn new(rate: f64, seed: Option<u64>, component: &str) -> Self {
        Dropout {
            rate,
            rng: seed.map(|s| name_rng(s, component)),
        }
    }

    pub fn apply<'t>(&mut self, x: Var<'t>) -> Result<Var<'t>> {
        match &mut self.rng {
            Some(rng) => dropout(x, self.rate, true, rng),
            None => Ok(x),
        }
    }
}

/// Index of the highest-scoring token, never pad or sentence-begin; ties go to the lowest id.
pub fn best_token(log_probs: &[f64]) -> usize {
    let mut best = EOS;
    for (i, &v) in log_probs.iter().enumerate().skip(EOS + 1) {
        if v > log_probs[best] {
            best = i;
        }
    }
    best
}

/// Whether `id` may be produced by a decoder.
pub fn is_emittable(id: usize) -> bool {
    id != PAD && id != BOS
}

/// States a decoder attends over.
#[derive(Clone, Copy)]
pub struct DecoderMemory<'t> {
    pub primary: Memory<'t>,
    pub secondary: Option<Memory<'t>>,
}

/// Recurrent state after consuming `prev`.
#[derive(Clone, Debug)]
pub struct DecoderState<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    feedback: Var<'t>,
    feedback2: Option<Var<'t>>,
    pub prev: usize,
}

impl<'t> DecoderState<'t> {
    /// Top-layer hidden state `s_i`.
    pub fn hidden(&self) -> Var<'t> {
        self.layers.last().expect("at least one layer").0
    }
}

/// Output distribution of one step plus what is needed to advance.
#[derive(Clone, Copy, Debug)]
pub struct Prediction<'t> {
    pub log_probs: Var<'t>,
    pub weights: Var<'t>,
    pub weights2: Option<Var<'t>>,
    context: Var<'t>,
    feedback: Var<'t>,
    feedback2: Option<Var<'t>>,
}

/// Result of a teacher-forced pass.
pub struct TeacherForced<'t> {
    pub loss: Var<'t>,
    /// `s_1 .. s_{I+1}`, the last one after consuming the end marker.
    pub states: Vec<Var<'t>>,
    pub correct: usize,
    pub total: usize,
}

pub struct DecoderVars<'t> {
    embed: Var<'t>,
    lstms: Vec<LstmVars<'t>>,
    att: AttentionVars<'t>,
    att2: Option<AttentionVars<'t>>,
    out: OutputVars<'t>,
    pub vocab: usize,
}

impl<'t> DecoderVars<'t> {
    fn bind(layout: &DecoderLayout, tape: &'t Tape, store: &ParamStore) -> Result<Self> {
        Ok(DecoderVars {
            embed: layout.embedding().bind(tape, store)?,
            lstms: (0..layout.layers)
                .map(|k| layout.lstm(k).bind(tape, store))
                .collect::<Result<_>>()?,
            att: layout.attention().bind(tape, store)?,
            att2: layout.attention2().map(|a| a.bind(tape, store)).transpose()?,
            out: layout.output().bind(tape, store)?,
            vocab: layout.vocab,
        })
    }

    pub fn memory(&self, primary: &[Var<'t>], secondary: Option<&[Var<'t>]>) -> Result<DecoderMemory<'t>> {
        let secondary = match (&self.att2, secondary) {
            (Some(a), Some(s)) => Some(a.memory(s)?),
            (None, None) => None,
            _ => return Err(Error::InvalidArgument("second attention memory mismatch".into())),
        };
        Ok(DecoderMemory {
            primary: self.att.memory(primary)?,
            secondary,
        })
    }

    pub fn start(&self, mem: &DecoderMemory<'t>) -> DecoderState<'t> {
        DecoderState {
            layers: self.lstms.iter().map(|l| l.zero_state()).collect(),
            feedback: mem.primary.zero_feedback(),
            feedback2: mem.secondary.as_ref().map(|m| m.zero_feedback()),
            prev: BOS,
        }
    }

    /// Attends with `s_{i-1}` and scores `softmax(W [e_{i-1}; s_{i-1}; c_i] + b)`.
    pub fn predict(&self, mem: &DecoderMemory<'t>, state: &DecoderState<'t>, drop: &mut Dropout) -> Result<Prediction<'t>> {
        let tape = self.embed.tape();
        let s_prev = state.hidden();
        let a1 = additive_attention(&self.att, s_prev, &mem.primary, state.feedback)?;
        let (context, weights2, feedback2) = match (&self.att2, &mem.secondary, state.feedback2) {
            (Some(att2), Some(m2), Some(fb2)) => {
                let a2 = additive_attention(att2, s_prev, m2, fb2)?;
                (tape.concat(&[a1.context, a2.context])?, Some(a2.weights), Some(a2.feedback))
            }
            _ => (a1.context, None, None),
        };
        let e_prev = embed(self.embed, state.prev)?;
        let x = drop.apply(tape.concat(&[e_prev, s_prev, context])?)?;
        Ok(Prediction {
            log_probs: self.out.log_probs(&[x])?,
            weights: a1.weights,
            weights2,
            context,
            feedback: a1.feedback,
            feedback2,
        })
    }

    /// Consumes `token`: `s_i = LSTM([e_i; c_i], s_{i-1})`.
    pub fn advance(&self, state: &DecoderState<'t>, pred: &Prediction<'t>, token: usize) -> Result<DecoderState<'t>> {
        let tape = self.embed.tape();
        let mut input = tape.concat(&[embed(self.embed, token)?, pred.context])?;
        let mut layers = Vec::with_capacity(self.lstms.len());
        for (lstm, &st) in self.lstms.iter().zip(&state.layers) {
            let next = lstm_step(lstm, input, st)?;
            input = next.0;
            layers.push(next);
        }
        Ok(DecoderState {
            layers,
            feedback: pred.feedback,
            feedback2: pred.feedback2,
            prev: token,
        })
    }

    /// Label-smoothed loss of `target` followed by the end marker.
    pub fn teacher_forced(
        &self,
        mem: &DecoderMemory<'t>,
        target: &[usize],
        smoothing: f64,
        drop: &mut Dropout,
    ) -> Result<TeacherForced<'t>> {
        if target.is_empty() {
            return Err(Error::Empty("decoder target".into()));
        }
        let mut state = self.start(mem);
        let mut terms = Vec::with_capacity(target.len() + 1);
        let mut states = Vec::with_capacity(target.len() + 1);
        let mut correct = 0;
        for &y in target.iter().chain(std::iter::once(&EOS)) {
            if !is_emittable(y) || y >= self.vocab {
                return Err(Error::TokenOutOfRange { id: y, size: self.vocab });
            }
            let pred = self.predict(mem, &state, drop)?;
            if pred.log_probs.with_value(|t| best_token(t.data())) == y {
                correct += 1;
            }
            terms.push(pred.log_probs.smoothed_nll(smoothed_target(self.vocab, y, smoothing)?)?);
            state = self.advance(&state, &pred, y)?;
            states.push(state.hidden());
        }
        let tape = self.embed.tape();
        Ok(TeacherForced {
            loss: tape.stack(&terms)?.sum(),
            states,
            correct,
            total: terms.len(),
        })
    }

    /// Greedy decode of at most `max_len` tokens (end marker included) and the state after each.
    pub fn greedy(&self, mem: &DecoderMemory<'t>, max_len: usize, drop: &mut Dropout) -> Result<(Vec<usize>, Vec<Var<'t>>)> {
        let mut state = self.start(mem);
        let mut tokens = Vec::new();
        let mut states = Vec::new();
        while tokens.len() < max_len.max(1) {
            let pred = self.predict(mem, &state, drop)?;
            let y = pred.log_probs.with_value(|t| best_token(t.data()));
            state = self.advance(&state, &pred, y)?;
            tokens.push(y);
            states.push(state.hidden());
            if y == EOS {
                break;
            }
        }
        Ok((tokens, states))
    }
}

/// Speech-encoder parameters on a tape.
struct SpeechEncoderVars<'t> {
    layers: Vec<BlstmVars<'t>>,
    pools: Vec<usize>,
}

struct TextEncoderVars<'t> {
    embed: Var<'t>,
    layers: Vec<BlstmVars<'t>>,
}

/// Every parameter of a [`ModelGraph`] bound onto one tape.
pub struct Network<'t> {
    pub tape: &'t Tape,
    pub topology: Topology,
    pub config: ModelConfig,
    encoder: Option<SpeechEncoderVars<'t>>,
    text_encoder: Option<TextEncoderVars<'t>>,
    ctc_head: Option<OutputVars<'t>>,
    adapter: Option<(AdapterPosition, BlstmVars<'t>)>,
    pub decoder_st: Option<DecoderVars<'t>>,
    pub decoder_asr: Option<DecoderVars<'t>>,
}

impl<'t> Network<'t> {
    pub fn bind(graph: &ModelGraph, tape: &'t Tape, store: &ParamStore) -> Result<Self> {
        let t = graph.topology;
        let encoder = if t.has_speech_encoder() {
            Some(SpeechEncoderVars {
                layers: (0..graph.enc_depth)
                    .map(|k| graph.encoder_layer(k).bind(tape, store))
                    .collect::<Result<_>>()?,
                pools: graph.pool_schedule(),
            })
        } else {
            None
        };
        let text_encoder = if t.has_text_encoder() {
            Some(TextEncoderVars {
                embed: graph.text_embedding().bind(tape, store)?,
                layers: (0..graph.config.text_enc_layers)
                    .map(|k| graph.text_encoder_layer(k).bind(tape, store))
                    .collect::<Result<_>>()?,
            })
        } else {
            None
        };
        let adapter = match (graph.adapter, graph.adapter_layer()) {
            (Some(pos), Some(layer)) => Some((pos, layer.bind(tape, store)?)),
            _ => None,
        };
        Ok(Network {
            tape,
            topology: t,
            config: graph.config.clone(),
            encoder,
            text_encoder,
            ctc_head: graph.has_ctc().then(|| graph.ctc_head().bind(tape, store)).transpose()?,
            adapter,
            decoder_st: graph.st_decoder().map(|d| DecoderVars::bind(&d, tape, store)).transpose()?,
            decoder_asr: graph.asr_decoder().map(|d| DecoderVars::bind(&d, tape, store)).transpose()?,
        })
    }

    pub fn dropout(&self, seed: Option<u64>, component: &str) -> Dropout {
        Dropout::new(self.config.dropout, seed, component)
    }

    /// BLSTM stack with interleaved pooling; returns `h_1 .. h_{T'}`.
    pub fn encode_speech(&self, x: &FeatureSequence, drop: &mut Dropout) -> Result<Vec<Var<'t>>> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no speech encoder", self.topology)))?;
        if x.dim() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features have {} dims, model expects {}",
                x.dim(),
                self.config.feature_dim
            )));
        }
        let mut xs: Vec<Var<'t>> = (0..x.len()).map(|t| self.tape.vector(x.frame(t).to_vec())).collect();
        for (layer, &pools) in enc.layers.iter().zip(&enc.pools) {
            xs = blstm(layer, &xs)?
                .into_iter()
                .map(|h| drop.apply(h))
                .collect::<Result<_>>()?;
            for _ in 0..pools {
                xs = max_pool_time(&xs, 2)?;
            }
        }
        Ok(xs)
    }

    /// Embeds and encodes a source token sequence.
    pub fn encode_text(&self, f: &[usize], drop: &mut Dropout) -> Result<Vec<Var<'t>>> {
        let enc = self
            .text_encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no text encoder", self.topology)))?;
        if f.is_empty() {
            return Err(Error::Empty("text encoder input".into()));
        }
        let mut xs: Vec<Var<'t>> = f.iter().map(|&id| embed(enc.embed, id)).collect::<Result<_>>()?;
        for layer in &enc.layers {
            xs = blstm(layer, &xs)?
                .into_iter()
                .map(|h| drop.apply(h))
                .collect::<Result<_>>()?;
        }
        Ok(xs)
    }

    /// `-log p_ctc(f | x)` from encoder states.
    pub fn ctc(&self, states: &[Var<'t>], f: &[usize]) -> Result<Var<'t>> {
        let head = self
            .ctc_head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("CTC head not enabled".into()))?;
        let (w, b) = head.weights();
        let stacked = self.tape.stack(states)?;
        let frame_logprobs = self.tape.matmul_nt(stacked, w)?.add_row(b)?.log_softmax_rows();
        ctc_loss_var(frame_logprobs, f)
    }

    pub fn has_ctc(&self) -> bool {
        self.ctc_head.is_some()
    }

    /// Runs the adapter if it sits at `position`; identity otherwise.
    pub fn adapt(&self, position: AdapterPosition, states: Vec<Var<'t>>, drop: &mut Dropout) -> Result<Vec<Var<'t>>> {
        match &self.adapter {
            Some((pos, layer)) if *pos == position => {
                blstm(layer, &states)?.into_iter().map(|h| drop.apply(h)).collect()
            }
            _ => Ok(states),
        }
    }

    pub fn st_decoder(&self) -> Result<&DecoderVars<'t>> {
        self.decoder_st
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no translation decoder", self.topology)))
    }

    pub fn asr_decoder(&self) -> Result<&DecoderVars<'t>> {
        self.decoder_asr
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no recognition decoder", self.topology)))
    }
}

