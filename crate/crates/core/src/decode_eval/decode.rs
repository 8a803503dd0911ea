use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSequence, EOS};
use crate::error::{Error, Result};
use crate::models::{
    best_token, is_emittable, AdapterPosition, DecoderMemory, DecoderState, DecoderVars, Dropout, ModelGraph, Network,
    Topology,
};
use crate::numerics::{ParamStore, Tape};

/// What to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Speech to translation.
    St,
    /// Speech to transcript.
    Asr,
    /// Transcript to translation.
    Mt,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::St => "st",
            Direction::Asr => "asr",
            Direction::Mt => "mt",
        }
    }

    /// Directions a topology can decode.
    pub fn supported(topology: Topology) -> &'static [Direction] {
        match topology {
            Topology::Direct => &[Direction::St],
            Topology::Asr => &[Direction::Asr],
            Topology::Mt => &[Direction::Mt],
            Topology::Many2one => &[Direction::St, Direction::Mt],
            Topology::One2many | Topology::TiedCascade | Topology::TiedTriangle => &[Direction::St, Direction::Asr],
        }
    }

    /// The natural direction of a topology.
    pub fn primary(topology: Topology) -> Direction {
        Direction::supported(topology)[0]
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "st" => Ok(Direction::St),
            "asr" => Ok(Direction::Asr),
            "mt" => Ok(Direction::Mt),
            _ => Err(Error::Config(format!("unknown direction `{s}`"))),
        }
    }
}

/// Model input.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Speech(&'a FeatureSequence),
    Text(&'a [usize]),
}

impl Source<'_> {
    /// Default decoding budget: one token per input position, plus slack for text.
    pub fn default_max_len(&self) -> usize {
        match self {
            Source::Speech(x) => x.len(),
            Source::Text(f) => 2 * f.len() + 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted ids; a finished hypothesis ends with the end marker.
    pub tokens: Vec<usize>,
    /// Cumulative model log-probability in nats.
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the end marker.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// `log_prob / len^alpha`.
    pub fn normalized(&self, alpha: f64) -> f64 {
        normalized_score(self.log_prob, self.tokens.len(), alpha)
    }
}

pub fn normalized_score(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if len == 0 {
        log_prob
    } else {
        log_prob / (len as f64).powf(alpha)
    }
}

/// Beam-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub beam: usize,
    /// Token budget; `None` uses [`Source::default_max_len`].
    pub max_len: Option<usize>,
    /// Length-normalization exponent.
    pub alpha: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            beam: 12,
            max_len: None,
            alpha: 0.6,
        }
    }
}

/// Binds the network and prepares the decoder and its memory for `direction`.
fn prepare<'n, 't>(
    net: &'n Network<'t>,
    direction: Direction,
    source: Source<'_>,
    max_len: usize,
) -> Result<(&'n DecoderVars<'t>, DecoderMemory<'t>)> {
    if !Direction::supported(net.topology).contains(&direction) {
        return Err(Error::InvalidArgument(format!(
            "{} cannot decode direction {}",
            net.topology,
            direction.name()
        )));
    }
    let mut off = Dropout::off();
    match (direction, source) {
        (Direction::Mt, Source::Text(f)) => {
            let enc = net.encode_text(f, &mut off)?;
            let dec = net.st_decoder()?;
            Ok((dec, dec.memory(&enc, None)?))
        }
        (Direction::Asr, Source::Speech(x)) => {
            let enc = net.encode_speech(x, &mut off)?;
            let h = net.adapt(AdapterPosition::EncoderTop, enc, &mut off)?;
            let dec = net.asr_decoder()?;
            Ok((dec, dec.memory(&h, None)?))
        }
        (Direction::St, Source::Speech(x)) => {
            let enc = net.encode_speech(x, &mut off)?;
            let dec = net.st_decoder()?;
            if net.topology.is_tied() {
                let dasr = net.asr_decoder()?;
                let (_, states) = dasr.greedy(&dasr.memory(&enc, None)?, max_len, &mut off)?;
                let states = net.adapt(AdapterPosition::AsrDecoderTop, states, &mut off)?;
                let mem = if net.topology == Topology::TiedTriangle {
                    dec.memory(&enc, Some(&states))?
                } else {
                    dec.memory(&states, None)?
                };
                Ok((dec, mem))
            } else {
                let h = net.adapt(AdapterPosition::EncoderTop, enc, &mut off)?;
                Ok((dec, dec.memory(&h, None)?))
            }
        }
        (d, _) => Err(Error::InvalidArgument(format!("direction {} needs the other input kind", d.name()))),
    }
}

/// Argmax token per step until the end marker or `max_len` tokens.
pub fn greedy_decode(
    graph: &ModelGraph,
    store: &ParamStore,
    direction: Direction,
    source: Source<'_>,
    max_len: Option<usize>,
) -> Result<Hypothesis> {
    let max_len = max_len.unwrap_or_else(|| source.default_max_len()).max(1);
    let tape = Tape::new();
    let net = Network::bind(graph, &tape, store)?;
    let (dec, mem) = prepare(&net, direction, source, max_len)?;
    let mut off = Dropout::off();
    let mut state = dec.start(&mem);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let pred = dec.predict(&mem, &state, &mut off)?;
        let (y, lp) = pred.log_probs.with_value(|t| {
            let y = best_token(t.data());
            (y, t.data()[y])
        });
        hyp.tokens.push(y);
        hyp.log_prob += lp;
        if y == EOS {
            hyp.finished = true;
            break;
        }
        state = dec.advance(&state, &pred, y)?;
    }
    Ok(hyp)
}

struct Live<'t> {
    hyp: Hypothesis,
    state: DecoderState<'t>,
}

struct Candidate {
    parent: usize,
    token: usize,
    token_lp: f64,
    score: f64,
}

/// Higher score first; then higher token log-probability, lower token id, earlier parent.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.token_lp.total_cmp(&a.token_lp))
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

/// Beam search. Each step keeps the `beam` best expansions by cumulative
/// log-probability; search ends once `beam` hypotheses have finished, none
/// are live, or the budget is spent. The result is the finished hypothesis
/// with the best length-normalized score, or the best live one if none finished.
pub fn beam_decode(
    graph: &ModelGraph,
    store: &ParamStore,
    direction: Direction,
    source: Source<'_>,
    opts: &SearchOptions,
) -> Result<Hypothesis> {
    if opts.beam == 0 {
        return Err(Error::InvalidArgument("beam must be at least 1".into()));
    }
    let max_len = opts.max_len.unwrap_or_else(|| source.default_max_len()).max(1);
    let tape = Tape::new();
    let net = Network::bind(graph, &tape, store)?;
    let (dec, mem) = prepare(&net, direction, source, max_len)?;
    let mut off = Dropout::off();
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: dec.start(&mem),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() || finished.len() >= opts.beam {
            break;
        }
        let mut preds = Vec::with_capacity(live.len());
        let mut cands = Vec::new();
        for (p, l) in live.iter().enumerate() {
            let pred = dec.predict(&mem, &l.state, &mut off)?;
            pred.log_probs.with_value(|t| {
                for (token, &lp) in t.data().iter().enumerate() {
                    if is_emittable(token) {
                        cands.push(Candidate {
                            parent: p,
                            token,
                            token_lp: lp,
                            score: l.hyp.log_prob + lp,
                        });
                    }
                }
            });
            preds.push(pred);
        }
        cands.sort_by(rank);
        cands.truncate(opts.beam);
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let mut tokens = parent.hyp.tokens.clone();
            tokens.push(c.token);
            let hyp = Hypothesis {
                tokens,
                log_prob: c.score,
                finished: c.token == EOS,
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                let state = dec.advance(&parent.state, &preds[c.parent], c.token)?;
                next.push(Live { hyp, state });
            }
        }
        live = next;
    }
    let pool: Vec<Hypothesis> = if finished.is_empty() {
        live.into_iter().map(|l| l.hyp).collect()
    } else {
        finished
    };
    // max_by keeps the last maximum; iterate reversed so earlier entries win ties
    pool.into_iter()
        .rev()
        .max_by(|a, b| a.normalized(opts.alpha).total_cmp(&b.normalized(opts.alpha)))
        .ok_or_else(|| Error::Empty("beam search produced no hypotheses".into()))
}

/// Output of the two-stage pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutput {
    pub transcript: Hypothesis,
    pub translation: Hypothesis,
    /// Set when the recognizer produced no tokens, so nothing was translated.
    pub empty_transcript: bool,
}

/// Recognize with one model, translate the transcript with another.
pub fn cascade(
    asr: (&ModelGraph, &ParamStore),
    mt: (&ModelGraph, &ParamStore),
    x: &FeatureSequence,
    opts: &SearchOptions,
) -> Result<CascadeOutput> {
    let transcript = beam_decode(asr.0, asr.1, Direction::Asr, Source::Speech(x), opts)?;
    let f = transcript.content().to_vec();
    if f.is_empty() {
        return Ok(CascadeOutput {
            transcript,
            translation: Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                finished: false,
            },
            empty_transcript: true,
        });
    }
    let mt_opts = SearchOptions { max_len: None, ..*opts };
    let translation = beam_decode(mt.0, mt.1, Direction::Mt, Source::Text(&f), &mt_opts)?;
    Ok(CascadeOutput {
        transcript,
        translation,
        empty_transcript: false,
    })
}
