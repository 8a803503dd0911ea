use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExamplePair, Vocabulary};
use crate::decode_eval::{beam_decode, cascade, greedy_decode, score, Direction, MetricReport, SearchOptions, Source};
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::numerics::ParamStore;
use crate::transplant::{resolve_checkpoint, Checkpoint};

/// A model direction, or the two-model recognize-then-translate pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDirection {
    St,
    Asr,
    Mt,
    Cascade,
}

impl EvalDirection {
    pub fn name(self) -> &'static str {
        match self {
            EvalDirection::St => "st",
            EvalDirection::Asr => "asr",
            EvalDirection::Mt => "mt",
            EvalDirection::Cascade => "cascade",
        }
    }

    fn single(self) -> Option<Direction> {
        match self {
            EvalDirection::St => Some(Direction::St),
            EvalDirection::Asr => Some(Direction::Asr),
            EvalDirection::Mt => Some(Direction::Mt),
            EvalDirection::Cascade => None,
        }
    }
}

impl fmt::Display for EvalDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cascade" => Ok(EvalDirection::Cascade),
            other => match other.parse::<Direction>()? {
                Direction::St => Ok(EvalDirection::St),
                Direction::Asr => Ok(EvalDirection::Asr),
                Direction::Mt => Ok(EvalDirection::Mt),
            },
        }
    }
}

fn decode_one(
    graph: &ModelGraph,
    store: &ParamStore,
    direction: Direction,
    ex: &ExamplePair,
    beam: usize,
) -> Result<(Vec<usize>, f64)> {
    let source = match direction {
        Direction::Mt => Source::Text(&ex.f.ids),
        _ => Source::Speech(&ex.x),
    };
    let hyp = if beam == 1 {
        greedy_decode(graph, store, direction, source, None)?
    } else {
        let opts = SearchOptions {
            beam,
            ..SearchOptions::default()
        };
        beam_decode(graph, store, direction, source, &opts)?
    };
    Ok((hyp.content().to_vec(), hyp.log_prob))
}

/// Reference side of an example for `direction`.
pub fn reference(direction: Direction, ex: &ExamplePair) -> &[usize] {
    match direction {
        Direction::Asr => &ex.f.ids,
        Direction::St | Direction::Mt => &ex.e.ids,
    }
}

/// Decoded token sequences with their model log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub hyps: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
}

/// Decodes `examples` (greedy for beam 1) and scores them against their references.
pub fn evaluate_split(
    graph: &ModelGraph,
    store: &ParamStore,
    examples: &[&ExamplePair],
    direction: Direction,
    beam: usize,
) -> Result<(Decoded, MetricReport)> {
    if !Direction::supported(graph.topology).contains(&direction) {
        return Err(Error::InvalidArgument(format!(
            "{} cannot decode direction {}",
            graph.topology,
            direction.name()
        )));
    }
    let mut out = Decoded {
        hyps: Vec::new(),
        log_probs: Vec::new(),
    };
    let mut refs = Vec::new();
    for ex in examples {
        let (h, lp) = decode_one(graph, store, direction, ex, beam)?;
        out.hyps.push(h);
        out.log_probs.push(lp);
        refs.push(reference(direction, ex).to_vec());
    }
    let report = score(&out.hyps, &refs)?;
    Ok((out, report))
}

fn check_vocab(graph: &ModelGraph, ds: &Dataset, needs_speech: bool, needs_target: bool) -> Result<()> {
    let c = &graph.config;
    if ds.src_vocab.len() != c.src_vocab_size {
        return Err(Error::VocabMismatch(format!(
            "model source vocabulary has {} ids, data has {}",
            c.src_vocab_size,
            ds.src_vocab.len()
        )));
    }
    if needs_target && ds.tgt_vocab.len() != c.tgt_vocab_size {
        return Err(Error::VocabMismatch(format!(
            "model target vocabulary has {} ids, data has {}",
            c.tgt_vocab_size,
            ds.tgt_vocab.len()
        )));
    }
    if needs_speech && ds.feature_dim() != c.feature_dim {
        return Err(Error::VocabMismatch(format!(
            "model expects {} features per frame, data has {}",
            c.feature_dim,
            ds.feature_dim()
        )));
    }
    Ok(())
}

/// What `eval` should decode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    /// Checkpoint file or run directory; the recognizer for the cascade.
    pub checkpoint: PathBuf,
    /// Translator of the cascade.
    pub mt_checkpoint: Option<PathBuf>,
    pub direction: EvalDirection,
    pub split: String,
    pub beam: usize,
    pub out_dir: PathBuf,
}

/// Contents of the metric JSON written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub direction: EvalDirection,
    pub split: String,
    pub beam: usize,
    pub checkpoint: PathBuf,
    pub mt_checkpoint: Option<PathBuf>,
    pub report: MetricReport,
    /// Cascade only: sentences whose transcript came out empty.
    pub empty_transcripts: Option<usize>,
}

fn render(vocab: &Vocabulary, hyps: &[Vec<usize>]) -> String {
    hyps.iter().map(|h| vocab.render(h) + "\n").collect()
}

/// Paths `eval` writes for a request.
pub fn eval_paths(req: &EvalRequest) -> (PathBuf, PathBuf) {
    let stem = format!("{}.{}", req.direction.name(), req.split);
    (
        req.out_dir.join(format!("hyps.{stem}.txt")),
        req.out_dir.join(format!("metrics.{stem}.json")),
    )
}

/// Decodes `data` with the requested checkpoint(s), writes hypotheses and metrics.
pub fn cmd_eval(req: &EvalRequest, data: &Dataset) -> Result<EvalOutput> {
    if req.beam == 0 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Empty(format!("{} split", req.split)));
    }
    let ckpt = Checkpoint::load(&resolve_checkpoint(&req.checkpoint)?)?;
    let examples: Vec<&ExamplePair> = data.examples.iter().collect();
    let (hyps, report, empty, vocab) = match req.direction.single() {
        Some(direction) => {
            if req.mt_checkpoint.is_some() {
                return Err(Error::Config("a second checkpoint is only used by the cascade".into()));
            }
            let needs_speech = direction != Direction::Mt;
            check_vocab(&ckpt.graph, data, needs_speech, direction != Direction::Asr)?;
            let (decoded, report) = evaluate_split(&ckpt.graph, &ckpt.params, &examples, direction, req.beam)?;
            let vocab = if direction == Direction::Asr { &data.src_vocab } else { &data.tgt_vocab };
            (decoded.hyps, report, None, vocab)
        }
        None => {
            let mt_path = req
                .mt_checkpoint
                .as_ref()
                .ok_or_else(|| Error::Config("cascade needs a translation checkpoint".into()))?;
            let mt = Checkpoint::load(&resolve_checkpoint(mt_path)?)?;
            if !Direction::supported(ckpt.graph.topology).contains(&Direction::Asr) {
                return Err(Error::InvalidArgument(format!("{} cannot transcribe", ckpt.graph.topology)));
            }
            if !Direction::supported(mt.graph.topology).contains(&Direction::Mt) {
                return Err(Error::InvalidArgument(format!("{} cannot translate text", mt.graph.topology)));
            }
            check_vocab(&ckpt.graph, data, true, false)?;
            check_vocab(&mt.graph, data, false, true)?;
            let opts = SearchOptions {
                beam: req.beam,
                ..SearchOptions::default()
            };
            let mut hyps = Vec::new();
            let mut refs = Vec::new();
            let mut empty = 0;
            for ex in &examples {
                let out = cascade((&ckpt.graph, &ckpt.params), (&mt.graph, &mt.params), &ex.x, &opts)?;
                empty += usize::from(out.empty_transcript);
                hyps.push(out.translation.content().to_vec());
                refs.push(ex.e.ids.clone());
            }
            let report = score(&hyps, &refs)?;
            (hyps, report, Some(empty), &data.tgt_vocab)
        }
    };
    fs::create_dir_all(&req.out_dir).map_err(|e| Error::io(&req.out_dir, e))?;
    let (hyp_path, metric_path) = eval_paths(req);
    fs::write(&hyp_path, render(vocab, &hyps)).map_err(|e| Error::io(&hyp_path, e))?;
    let output = EvalOutput {
        direction: req.direction,
        split: req.split.clone(),
        beam: req.beam,
        checkpoint: req.checkpoint.clone(),
        mt_checkpoint: req.mt_checkpoint.clone(),
        report,
        empty_transcripts: empty,
    };
    write_json(&metric_path, &output)?;
    Ok(output)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
