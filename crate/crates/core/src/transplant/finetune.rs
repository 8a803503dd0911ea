use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{checkpoint_name, write_best_marker, Checkpoint};
use crate::data::{filter, BatchOptions, CtcFilter, Dataset, ExamplePair};
use crate::decode_eval::{beam_decode, greedy_decode, score, Direction, SearchOptions, Source};
use crate::error::{Error, Result};
use crate::models::{
    accumulate_example, evaluate_example, ForwardOptions, LossBreakdown, ModelGraph, Mode, TokenCounts, Topology,
};
use crate::numerics::{adam_step, Gradients, LrSchedule, OptimizerState, ParamStore};

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Non-improving dev evaluations before the learning rate decays.
    pub patience: usize,
    /// Optimizer steps between dev evaluations; 0 evaluates at the end of every epoch.
    pub checkpoint_every: usize,
    /// Examples with a longer transcript or translation are skipped.
    pub max_len: usize,
    pub ctc_filter: CtcFilter,
    /// Speech-encoder depth at the start of training; deeper layers are
    /// dropped and later regrown, which redraws their initial values exactly.
    pub initial_enc_layers: Option<usize>,
    /// Epochs between encoder growth steps; 0 never grows.
    pub grow_every: usize,
    /// Beam used for the dev BLEU that selects checkpoints.
    pub dev_beam: usize,
    /// Rescales the batch gradient to at most this global norm.
    pub grad_clip: Option<f64>,
    /// Ends training at the first evaluation whose dev token accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
    /// Seeds shuffling and dropout.
    pub seed: u64,
    /// Beam of the final dev/test evaluation of the selected checkpoint.
    pub test_beam: usize,
    /// Non-best checkpoints kept on disk; 0 keeps all.
    pub keep_last: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.0008,
            lr_decay: 0.9,
            patience: 6,
            checkpoint_every: 0,
            max_len: 75,
            ctc_filter: CtcFilter::Exact,
            initial_enc_layers: None,
            grow_every: 0,
            dev_beam: 1,
            grad_clip: None,
            stop_at_accuracy: None,
            seed: 1,
            test_beam: 12,
            keep_last: 3,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::Config("train.lr_decay must lie in (0, 1)".into()));
        }
        if self.patience == 0 || self.dev_beam == 0 || self.test_beam == 0 {
            return Err(Error::Config("train.patience and the beams must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("train.grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    fn batch_options(&self, graph: &ModelGraph) -> BatchOptions {
        BatchOptions {
            batch_size: self.batch_size,
            max_len: self.max_len,
            pools: graph.config.pools,
            ctc_filter: graph.has_ctc().then_some(self.ctc_filter),
        }
    }
}

/// Scores of one dev evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevReport {
    /// Mean loss terms per sentence.
    pub loss: LossBreakdown,
    /// Teacher-forced argmax accuracy of the decoder producing the primary output.
    pub accuracy: f64,
    /// Same for the transcript decoder of multi-task models.
    pub asr_accuracy: Option<f64>,
    pub bleu: f64,
    pub ter: f64,
    /// Word error rate of decoded transcripts, for models that produce them.
    pub wer: Option<f64>,
    pub sentences: usize,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub enc_depth: usize,
    pub learning_rate: f64,
    /// Mean training loss terms per example since the previous row.
    pub train: Option<LossBreakdown>,
    pub dev: DevReport,
    /// Whether this evaluation is the best so far.
    pub best: bool,
}

/// Receives every evaluated checkpoint.
pub trait CheckpointSink {
    fn record(&mut self, row: &RunRow, ckpt: &Checkpoint) -> Result<()>;
}

/// Keeps nothing.
pub struct Discard;

impl CheckpointSink for Discard {
    fn record(&mut self, _: &RunRow, _: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Writes `metrics.jsonl`, `ckpt-<step>` files and the `best` marker into a run directory.
pub struct RunDir {
    pub dir: PathBuf,
    /// Keep at most this many non-best checkpoints; 0 keeps all.
    pub keep_last: usize,
    written: Vec<usize>,
    best_step: Option<usize>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";

impl RunDir {
    /// Creates `dir` and truncates its metrics file.
    pub fn create(dir: &Path, keep_last: usize) -> Result<RunDir> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join(METRICS_FILE);
        fs::write(&metrics, "").map_err(|e| Error::io(&metrics, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            keep_last,
            written: Vec::new(),
            best_step: None,
        })
    }
}

impl CheckpointSink for RunDir {
    fn record(&mut self, row: &RunRow, ckpt: &Checkpoint) -> Result<()> {
        let metrics = self.dir.join(METRICS_FILE);
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&metrics)
            .map_err(|e| Error::io(&metrics, e))?;
        let line = serde_json::to_string(row).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&metrics, e))?;
        ckpt.save(&self.dir.join(checkpoint_name(row.step)))?;
        self.written.push(row.step);
        if row.best {
            write_best_marker(&self.dir, row.step)?;
            self.best_step = Some(row.step);
        }
        if self.keep_last > 0 {
            let stale: Vec<usize> = self.written.iter().copied().filter(|&s| Some(s) != self.best_step).collect();
            if stale.len() > self.keep_last {
                for &s in &stale[..stale.len() - self.keep_last] {
                    let p = self.dir.join(checkpoint_name(s));
                    fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                    self.written.retain(|&w| w != s);
                }
            }
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub rows: Vec<RunRow>,
    /// Checkpoint with the highest dev BLEU, earliest on ties.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub train_kept: usize,
    pub train_filtered: usize,
}

impl FinetuneOutcome {
    pub fn best_row(&self) -> &RunRow {
        self.rows.iter().find(|r| r.step == self.best.step).expect("best row recorded")
    }

    /// First completed epoch count at which dev accuracy reached `threshold`.
    pub fn epochs_to_accuracy(&self, threshold: f64) -> Option<usize> {
        epochs_to_accuracy(&self.rows, threshold)
    }
}

pub fn epochs_to_accuracy(rows: &[RunRow], threshold: f64) -> Option<usize> {
    rows.iter().find(|r| r.dev.accuracy >= threshold).map(|r| r.epoch)
}

/// SplitMix64 finalizer over a sequence of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged { step, detail },
        other => other,
    }
}

/// Dev evaluation: mean losses, teacher-forced accuracy, and decoded BLEU/TER (and WER).
pub fn evaluate_dev(graph: &ModelGraph, store: &ParamStore, dev: &[&ExamplePair], beam: usize) -> Result<DevReport> {
    if dev.is_empty() {
        return Err(Error::Empty("dev set".into()));
    }
    let topology = graph.topology;
    let mode = Mode::default_for(topology);
    let primary = Direction::primary(topology);
    let mut loss = LossBreakdown::default();
    let (mut st, mut asr) = (TokenCounts::default(), TokenCounts::default());
    let (mut hyps, mut refs) = (Vec::new(), Vec::new());
    let (mut asr_hyps, mut asr_refs) = (Vec::new(), Vec::new());
    let decode = |direction: Direction, ex: &ExamplePair| -> Result<Vec<usize>> {
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
        Ok(hyp.content().to_vec())
    };
    let transcribes = topology != Topology::Asr && Direction::supported(topology).contains(&Direction::Asr);
    for ex in dev {
        let r = evaluate_example(graph, store, ex, mode)?;
        loss.add(&r.breakdown);
        st.add(r.st);
        asr.add(r.asr);
        let reference = if primary == Direction::Asr { &ex.f.ids } else { &ex.e.ids };
        hyps.push(decode(primary, ex)?);
        refs.push(reference.clone());
        if transcribes {
            asr_hyps.push(decode(Direction::Asr, ex)?);
            asr_refs.push(ex.f.ids.clone());
        }
    }
    let report = score(&hyps, &refs)?;
    let wer = if primary == Direction::Asr {
        Some(report.wer)
    } else if transcribes {
        Some(score(&asr_hyps, &asr_refs)?.wer)
    } else {
        None
    };
    let (accuracy, asr_accuracy) = match topology {
        Topology::Asr => (asr.accuracy(), None),
        t if t.has_asr_decoder() => (st.accuracy(), Some(asr.accuracy())),
        _ => (st.accuracy(), None),
    };
    Ok(DevReport {
        loss: loss.scaled(1.0 / dev.len() as f64),
        accuracy,
        asr_accuracy,
        bleu: report.bleu,
        ter: report.ter,
        wer,
        sentences: dev.len(),
    })
}

/// Trains `store` on `train` with Adam, evaluates on `dev` at every
/// checkpoint, decays the learning rate on dev-BLEU plateaus and grows the
/// speech encoder one layer every `grow_every` epochs until the configured
/// depth. Parameters whose name starts with an entry of `freeze` are not updated.
/// Returns the best and last checkpoints; with zero epochs both hold the initialization.
pub fn finetune(
    graph: &ModelGraph,
    store: ParamStore,
    train: &Dataset,
    dev: &Dataset,
    schedule: &TrainSchedule,
    freeze: &[String],
    sink: &mut dyn CheckpointSink,
) -> Result<FinetuneOutcome> {
    schedule.validate()?;
    graph.check_store(&store)?;
    let opts = schedule.batch_options(graph);
    let kept = filter(train, &opts);
    if kept.kept.is_empty() {
        return Err(Error::Empty("no training examples left after filtering".into()));
    }
    let dev_kept = filter(dev, &opts);
    let dev_examples: Vec<&ExamplePair> = dev_kept.kept.iter().map(|&i| &dev.examples[i]).collect();
    let is_frozen = |name: &str| freeze.iter().any(|p| name.starts_with(p.as_str()));

    let mut graph = graph.clone();
    let mut store = store;
    if let Some(d) = schedule.initial_enc_layers {
        if d < graph.enc_depth {
            graph = graph.with_depth(d)?;
            let wanted: HashSet<String> = graph.param_specs().into_iter().map(|s| s.name).collect();
            let extra: Vec<String> = store.names().filter(|n| !wanted.contains(*n)).map(str::to_string).collect();
            for n in extra {
                store.remove(&n);
            }
        }
    }
    let mut opt = OptimizerState::new(&store, schedule.learning_rate);
    let mut plateau = LrSchedule::new(schedule.lr_decay, schedule.patience);
    let mut rows: Vec<RunRow> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut step = 0usize;
    let mut since = (LossBreakdown::default(), 0usize);

    let mut evaluate = |graph: &ModelGraph,
                        store: &ParamStore,
                        opt: &mut OptimizerState,
                        step: usize,
                        epoch: usize,
                        since: &mut (LossBreakdown, usize),
                        rows: &mut Vec<RunRow>,
                        best: &mut Option<Checkpoint>|
     -> Result<bool> {
        let report = evaluate_dev(graph, store, &dev_examples, schedule.dev_beam).map_err(|e| diverged(step, e))?;
        // strict comparison keeps the earliest of equal scores
        let is_best = report.bleu > rows.iter().map(|r| r.dev.bleu).fold(f64::NEG_INFINITY, f64::max);
        history.push(report.bleu);
        let stop = schedule.stop_at_accuracy.is_some_and(|a| report.accuracy >= a);
        let row = RunRow {
            step,
            epoch,
            enc_depth: graph.enc_depth,
            learning_rate: opt.learning_rate,
            train: (since.1 > 0).then(|| since.0.scaled(1.0 / since.1 as f64)),
            dev: report,
            best: is_best,
        };
        if step > 0 {
            opt.learning_rate = plateau.plateau_update(row.dev.bleu, opt.learning_rate);
        }
        let ckpt = Checkpoint {
            graph: graph.clone(),
            params: store.clone(),
            optimizer: Some(opt.clone()),
            step,
            dev_history: history.clone(),
        };
        sink.record(&row, &ckpt)?;
        if is_best {
            *best = Some(ckpt);
        }
        rows.push(row);
        *since = (LossBreakdown::default(), 0);
        Ok(stop)
    };

    let mut stopped = evaluate(&graph, &store, &mut opt, 0, 0, &mut since, &mut rows, &mut best)?;
    let mut order = kept.kept.clone();
    let mut epoch = 0;
    while epoch < schedule.epochs && !stopped {
        if schedule.grow_every > 0 && epoch > 0 && epoch % schedule.grow_every == 0 && graph.enc_depth < graph.config.enc_layers
        {
            graph = graph.grow_encoder(graph.enc_depth + 1)?;
            graph.init_missing(&mut store)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[schedule.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(schedule.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let mode = if graph.topology == Topology::Many2one && b % 2 == 1 {
                Mode::Text
            } else {
                Mode::default_for(graph.topology)
            };
            let weight = match (graph.topology, mode) {
                (Topology::Many2one, Mode::Speech) => graph.config.lambda,
                (Topology::Many2one, Mode::Text) => 1.0 - graph.config.lambda,
                _ => 1.0,
            };
            let mut grads = Gradients::zeros_like(&store);
            let scale = weight / idx.len() as f64;
            for (slot, &i) in idx.iter().enumerate() {
                let fo = ForwardOptions {
                    dropout_seed: Some(derive_seed(&[schedule.seed, step as u64, slot as u64])),
                };
                let r = accumulate_example(&graph, &store, &train.examples[i], mode, fo, scale, &mut grads)
                    .map_err(|e| diverged(step, e))?;
                if !r.breakdown.combined.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        detail: format!("non-finite loss on example {}", train.examples[i].id),
                    });
                }
                since.0.add(&r.breakdown);
                since.1 += 1;
            }
            if !grads.all_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "non-finite gradient".into(),
                });
            }
            for (name, g) in store.iter() {
                if is_frozen(name) {
                    grads.insert(name, crate::numerics::Tensor::zeros(g.shape()));
                }
            }
            if let Some(c) = schedule.grad_clip {
                let norm = grads.global_norm();
                if norm > c {
                    grads.scale(c / norm);
                }
            }
            adam_step(&mut store, &grads, &mut opt)?;
            step += 1;
            let last_of_epoch = b + 1 == batches.len();
            let due = if schedule.checkpoint_every == 0 {
                last_of_epoch
            } else {
                step.is_multiple_of(schedule.checkpoint_every)
            };
            if due {
                let done = epoch + usize::from(last_of_epoch);
                stopped = evaluate(&graph, &store, &mut opt, step, done, &mut since, &mut rows, &mut best)?;
                if stopped {
                    break;
                }
            }
        }
        epoch += 1;
    }
    let last_row_step = rows.last().map(|r| r.step);
    if last_row_step != Some(step) {
        evaluate(&graph, &store, &mut opt, step, epoch, &mut since, &mut rows, &mut best)?;
    }
    let last = Checkpoint {
        graph,
        params: store,
        optimizer: Some(opt),
        step,
        dev_history: history_of(&rows),
    };
    Ok(FinetuneOutcome {
        best: best.expect("initial evaluation recorded"),
        last,
        rows,
        train_kept: kept.kept.len(),
        train_filtered: kept.too_long + kept.ctc_infeasible,
    })
}

fn history_of(rows: &[RunRow]) -> Vec<f64> {
    rows.iter().map(|r| r.dev.bleu).collect()
}
