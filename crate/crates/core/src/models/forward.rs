use serde::{Deserialize, Serialize};

use super::config::{AdapterPosition, Topology};
use super::graph::ModelGraph;
use super::network::{DecoderMemory, Network, TeacherForced};
use crate::data::{ExamplePair, FeatureSequence};
use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Tape, Var};

/// Loss terms in nats per sequence. Absent terms are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `-log p(e | x)`, or `-log p(e | f)` for text input.
    pub st_loss: f64,
    pub asr_loss: f64,
    pub ctc_loss: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.st_loss += other.st_loss;
        self.asr_loss += other.asr_loss;
        self.ctc_loss += other.ctc_loss;
        self.combined += other.combined;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            st_loss: self.st_loss * k,
            asr_loss: self.asr_loss * k,
            ctc_loss: self.ctc_loss * k,
            combined: self.combined * k,
        }
    }
}

/// Teacher-forced argmax hits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub correct: usize,
    pub total: usize,
}

impl TokenCounts {
    pub fn add(&mut self, other: TokenCounts) {
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Which input feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Speech,
    /// Transcript through the text encoder.
    Text,
}

impl Mode {
    pub fn default_for(topology: Topology) -> Mode {
        if topology == Topology::Mt {
            Mode::Text
        } else {
            Mode::Speech
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Enables dropout with streams derived from this seed.
    pub dropout_seed: Option<u64>,
}

pub struct Forward<'t> {
    pub loss: Var<'t>,
    pub breakdown: LossBreakdown,
    pub st: TokenCounts,
    pub asr: TokenCounts,
    /// Length of the first decoder's greedy output (tied topologies).
    pub intermediate_len: Option<usize>,
}

fn counts(tf: &TeacherForced<'_>) -> TokenCounts {
    TokenCounts {
        correct: tf.correct,
        total: tf.total,
    }
}

/// Greedy budget of the first decoder during training.
pub fn intermediate_max_len(transcript_len: usize) -> usize {
    (3 * transcript_len).div_ceil(2)
}

impl<'t> Network<'t> {
    fn expect(&self, allowed: &[Topology]) -> Result<()> {
        if allowed.contains(&self.topology) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("forward not defined for {}", self.topology)))
        }
    }

    /// `λ·a + (1-λ)·b`.
    fn mix(&self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let l = self.config.lambda;
        a.scale(l).add(b.scale(1.0 - l))
    }

    fn ctc_term(&self, enc: &[Var<'t>], f: &[usize]) -> Result<Option<Var<'t>>> {
        if self.has_ctc() {
            Ok(Some(self.ctc(enc, f)?))
        } else {
            Ok(None)
        }
    }

    fn finish(
        &self,
        loss: Var<'t>,
        st: Option<&TeacherForced<'t>>,
        asr: Option<&TeacherForced<'t>>,
        ctc: Option<Var<'t>>,
    ) -> Forward<'t> {
        Forward {
            loss,
            breakdown: LossBreakdown {
                st_loss: st.map_or(0.0, |t| t.loss.scalar()),
                asr_loss: asr.map_or(0.0, |t| t.loss.scalar()),
                ctc_loss: ctc.map_or(0.0, |c| c.scalar()),
                combined: loss.scalar(),
            },
            st: st.map(counts).unwrap_or_default(),
            asr: asr.map(counts).unwrap_or_default(),
            intermediate_len: None,
        }
    }

    /// Direct model: `st` plus `ctc` when enabled.
    pub fn forward_direct(
        &self,
        x: &FeatureSequence,
        f: &[usize],
        e: &[usize],
        opts: ForwardOptions,
    ) -> Result<Forward<'t>> {
        self.expect(&[Topology::Direct, Topology::Many2one])?;
        let mut enc_drop = self.dropout(opts.dropout_seed, "encoder");
        let enc = self.encode_speech(x, &mut enc_drop)?;
        let ctc = self.ctc_term(&enc, f)?;
        let mut ad_drop = self.dropout(opts.dropout_seed, "adapter");
        let h = self.adapt(AdapterPosition::EncoderTop, enc, &mut ad_drop)?;
        let dec = self.st_decoder()?;
        let mem = dec.memory(&h, None)?;
        let mut drop = self.dropout(opts.dropout_seed, "decoder_st");
        let st = dec.teacher_forced(&mem, e, self.config.label_smoothing, &mut drop)?;
        let loss = match ctc {
            Some(c) => st.loss.add(c)?,
            None => st.loss,
        };
        Ok(self.finish(loss, Some(&st), None, ctc))
    }

    /// Standalone recognizer: `asr` plus `ctc` when enabled.
    pub fn forward_asr(&self, x: &FeatureSequence, f: &[usize], opts: ForwardOptions) -> Result<Forward<'t>> {
        self.expect(&[Topology::Asr])?;
        let mut enc_drop = self.dropout(opts.dropout_seed, "encoder");
        let enc = self.encode_speech(x, &mut enc_drop)?;
        let ctc = self.ctc_term(&enc, f)?;
        let dec = self.asr_decoder()?;
        let mem = dec.memory(&enc, None)?;
        let mut drop = self.dropout(opts.dropout_seed, "decoder_asr");
        let asr = dec.teacher_forced(&mem, f, self.config.label_smoothing, &mut drop)?;
        let loss = match ctc {
            Some(c) => asr.loss.add(c)?,
            None => asr.loss,
        };
        Ok(self.finish(loss, None, Some(&asr), ctc))
    }

    /// Text-to-text translation through the text encoder and the translation decoder.
    pub fn forward_mt(&self, f: &[usize], e: &[usize], opts: ForwardOptions) -> Result<Forward<'t>> {
        self.expect(&[Topology::Mt, Topology::Many2one])?;
        let mut enc_drop = self.dropout(opts.dropout_seed, "text_encoder");
        let enc = self.encode_text(f, &mut enc_drop)?;
        let dec = self.st_decoder()?;
        let mem = dec.memory(&enc, None)?;
        let mut drop = self.dropout(opts.dropout_seed, "decoder_st");
        let st = dec.teacher_forced(&mem, e, self.config.label_smoothing, &mut drop)?;
        Ok(self.finish(st.loss, Some(&st), None, None))
    }

    /// Shared speech encoder, two decoders: `λ·st + (1-λ)·(asr + ctc)`.
    pub fn forward_one2many(
        &self,
        x: &FeatureSequence,
        f: &[usize],
        e: &[usize],
        opts: ForwardOptions,
    ) -> Result<Forward<'t>> {
        self.expect(&[Topology::One2many])?;
        let mut enc_drop = self.dropout(opts.dropout_seed, "encoder");
        let enc = self.encode_speech(x, &mut enc_drop)?;
        let ctc = self.ctc_term(&enc, f)?;
        let mut ad_drop = self.dropout(opts.dropout_seed, "adapter");
        let h = self.adapt(AdapterPosition::EncoderTop, enc, &mut ad_drop)?;
        let dst = self.st_decoder()?;
        let mut drop = self.dropout(opts.dropout_seed, "decoder_st");
        let st = dst.teacher_forced(&dst.memory(&h, None)?, e, self.config.label_smoothing, &mut drop)?;
        let dasr = self.asr_decoder()?;
        let mut drop = self.dropout(opts.dropout_seed, "decoder_asr");
        let asr = dasr.teacher_forced(&dasr.memory(&h, None)?, f, self.config.label_smoothing, &mut drop)?;
        let aux = match ctc {
            Some(c) => asr.loss.add(c)?,
            None => asr.loss,
        };
        let loss = self.mix(st.loss, aux)?;
        Ok(self.finish(loss, Some(&st), Some(&asr), ctc))
    }

    /// Shared translation decoder over speech or text input. Each call is one
    /// task; λ is applied by whoever aggregates the alternating batches.
    pub fn forward_many2one(&self, ex: &ExamplePair, mode: Mode, opts: ForwardOptions) -> Result<Forward<'t>> {
        self.expect(&[Topology::Many2one])?;
        match mode {
            Mode::Speech => self.forward_direct(&ex.x, &ex.f.ids, &ex.e.ids, opts),
            Mode::Text => self.forward_mt(&ex.f.ids, &ex.e.ids, opts),
        }
    }

    fn forward_tied(&self, x: &FeatureSequence, f: &[usize], e: &[usize], opts: ForwardOptions) -> Result<Forward<'t>> {
        let mut enc_drop = self.dropout(opts.dropout_seed, "encoder");
        let enc = self.encode_speech(x, &mut enc_drop)?;
        let ctc = self.ctc_term(&enc, f)?;
        let dasr = self.asr_decoder()?;
        let asr_mem = dasr.memory(&enc, None)?;
        let mut asr_drop = self.dropout(opts.dropout_seed, "decoder_asr");
        let asr = dasr.teacher_forced(&asr_mem, f, self.config.label_smoothing, &mut asr_drop)?;
        let (tokens, states) = dasr.greedy(&asr_mem, intermediate_max_len(f.len()), &mut asr_drop)?;
        let mut ad_drop = self.dropout(opts.dropout_seed, "adapter");
        let states = self.adapt(AdapterPosition::AsrDecoderTop, states, &mut ad_drop)?;
        let dst = self.st_decoder()?;
        let mem: DecoderMemory<'t> = if self.topology == Topology::TiedTriangle {
            dst.memory(&enc, Some(&states))?
        } else {
            dst.memory(&states, None)?
        };
        let mut drop = self.dropout(opts.dropout_seed, "decoder_st");
        let st = dst.teacher_forced(&mem, e, self.config.label_smoothing, &mut drop)?;
        let aux = match ctc {
            Some(c) => asr.loss.add(c)?,
            None => asr.loss,
        };
        let loss = self.mix(st.loss, aux)?;
        let mut out = self.finish(loss, Some(&st), Some(&asr), ctc);
        out.intermediate_len = Some(tokens.len());
        Ok(out)
    }

    /// Second decoder attends only to the first decoder's greedy states.
    pub fn forward_tied_cascade(
        &self,
        x: &FeatureSequence,
        f: &[usize],
        e: &[usize],
        opts: ForwardOptions,
    ) -> Result<Forward<'t>> {
        self.expect(&[Topology::TiedCascade])?;
        self.forward_tied(x, f, e, opts)
    }

    /// Second decoder attends to the encoder and to the first decoder's states.
    pub fn forward_tied_triangle(
        &self,
        x: &FeatureSequence,
        f: &[usize],
        e: &[usize],
        opts: ForwardOptions,
    ) -> Result<Forward<'t>> {
        self.expect(&[Topology::TiedTriangle])?;
        self.forward_tied(x, f, e, opts)
    }

    /// Dispatches on the topology.
    pub fn forward(&self, ex: &ExamplePair, mode: Mode, opts: ForwardOptions) -> Result<Forward<'t>> {
        let (x, f, e) = (&ex.x, ex.f.ids.as_slice(), ex.e.ids.as_slice());
        match (self.topology, mode) {
            (Topology::Many2one, m) => self.forward_many2one(ex, m, opts),
            (Topology::Mt, Mode::Text) => self.forward_mt(f, e, opts),
            (Topology::Direct, Mode::Speech) => self.forward_direct(x, f, e, opts),
            (Topology::Asr, Mode::Speech) => self.forward_asr(x, f, opts),
            (Topology::One2many, Mode::Speech) => self.forward_one2many(x, f, e, opts),
            (Topology::TiedCascade, Mode::Speech) => self.forward_tied_cascade(x, f, e, opts),
            (Topology::TiedTriangle, Mode::Speech) => self.forward_tied_triangle(x, f, e, opts),
            (t, m) => Err(Error::InvalidArgument(format!("{t} does not accept {m:?} input"))),
        }
    }
}

/// Summary of one example's forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExampleResult {
    pub breakdown: LossBreakdown,
    pub st: TokenCounts,
    pub asr: TokenCounts,
}

/// Loss of one example without recording gradients.
pub fn evaluate_example(graph: &ModelGraph, store: &ParamStore, ex: &ExamplePair, mode: Mode) -> Result<ExampleResult> {
    let tape = Tape::new();
    let net = Network::bind(graph, &tape, store)?;
    let out = net.forward(ex, mode, ForwardOptions::default())?;
    Ok(ExampleResult {
        breakdown: out.breakdown,
        st: out.st,
        asr: out.asr,
    })
}

/// Adds `scale · ∂loss/∂θ` of one example to `grads`.
pub fn accumulate_example(
    graph: &ModelGraph,
    store: &ParamStore,
    ex: &ExamplePair,
    mode: Mode,
    opts: ForwardOptions,
    scale: f64,
    grads: &mut Gradients,
) -> Result<ExampleResult> {
    let tape = Tape::new();
    let net = Network::bind(graph, &tape, store)?;
    let out = net.forward(ex, mode, opts)?;
    tape.backward_into(out.loss, store, scale, grads)?;
    Ok(ExampleResult {
        breakdown: out.breakdown,
        st: out.st,
        asr: out.asr,
    })
}

/// Summed loss terms of a padded batch. Each example is cut back to its own
/// lengths first, so padding never reaches a loss.
pub fn evaluate_batch(graph: &ModelGraph, store: &ParamStore, batch: &crate::data::Batch, mode: Mode) -> Result<ExampleResult> {
    let mut total = ExampleResult::default();
    for b in 0..batch.len() {
        let r = evaluate_example(graph, store, &batch.example(b)?, mode)?;
        total.breakdown.add(&r.breakdown);
        total.st.add(r.st);
        total.asr.add(r.asr);
    }
    Ok(total)
}
