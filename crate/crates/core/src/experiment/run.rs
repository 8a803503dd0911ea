use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Splits, SPLIT_NAMES};
use super::eval::{evaluate_split, write_json};
use crate::data::{save_dataset, ExamplePair};
use crate::decode_eval::{Direction, MetricReport};
use crate::error::{Error, Result};
use crate::models::{build, ModelGraph};
use crate::numerics::ParamStore;
use crate::transplant::{
    apply_transplant, insert_adapter, resolve_checkpoint, Checkpoint, FinetuneOutcome, Graft, RunDir, RunRow,
    SourceModel, TransplantReport,
};

pub const SUMMARY_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRANSPLANT_FILE: &str = "transplant.json";

/// Final scores of the selected checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScores {
    pub direction: Direction,
    pub beam: usize,
    pub dev: MetricReport,
    pub test: Option<MetricReport>,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub topology: String,
    pub ctc: bool,
    pub scheme: String,
    pub steps: usize,
    pub best_step: usize,
    /// `ckpt-<step>` of the selected checkpoint, relative to the run directory.
    pub best_checkpoint: String,
    pub best_dev_bleu: f64,
    pub train_examples: usize,
    pub train_filtered: usize,
    pub final_scores: FinalScores,
}

/// Per-checkpoint rows plus the summary.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
    pub dir: PathBuf,
}

fn load_source(path: &Option<PathBuf>, which: &str) -> Result<Checkpoint> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("scheme needs transplant.{which}_checkpoint")))?;
    Checkpoint::load(&resolve_checkpoint(p)?)
}

/// Builds the model of `cfg` and initializes it for `seed`, applying the
/// adapter and transplant scheme when configured.
pub fn initialize(cfg: &ExperimentConfig, seed: u64) -> Result<(ModelGraph, ParamStore, Option<TransplantReport>)> {
    let mut graph = build(&cfg.model, cfg.topology)?;
    let mut store = graph.init_store(seed)?;
    let t = &cfg.transplant;
    if t.adapter {
        let pos = cfg
            .topology
            .adapter_position()
            .ok_or_else(|| Error::Config(format!("{} has no adapter position", cfg.topology)))?;
        graph = insert_adapter(&graph, &mut store, pos)?;
    }
    if t.grafts.is_empty() {
        return Ok((graph, store, None));
    }
    let scheme = t.scheme();
    let asr = if scheme.needs(SourceModel::Asr) { Some(load_source(&t.asr_checkpoint, "asr")?) } else { None };
    let mt = if scheme.needs(SourceModel::Mt) { Some(load_source(&t.mt_checkpoint, "mt")?) } else { None };
    let sources: Vec<(Graft, &Checkpoint)> = t
        .grafts
        .iter()
        .map(|&g| {
            let c = match g.source_model() {
                SourceModel::Asr => asr.as_ref(),
                SourceModel::Mt => mt.as_ref(),
            };
            (g, c.expect("loaded above"))
        })
        .collect();
    let report = apply_transplant(&graph, &mut store, &scheme, &sources)?;
    Ok((graph, store, Some(report)))
}

fn examples(ds: &crate::data::Dataset) -> Vec<&ExamplePair> {
    ds.examples.iter().collect()
}

/// Trains one seed of `cfg` on `splits` and writes the run directory.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, splits: &Splits) -> Result<RunRecord> {
    let cfg = cfg.for_seed(seed);
    let (graph, store, report) = initialize(&cfg, seed)?;
    let dir = cfg.run_dir(seed);
    let mut sink = RunDir::create(&dir, cfg.train.keep_last)?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    if let Some(r) = &report {
        write_json(&dir.join(TRANSPLANT_FILE), r)?;
    }
    let outcome: FinetuneOutcome = crate::transplant::finetune(
        &graph,
        store,
        &splits.train,
        &splits.dev,
        &cfg.train,
        &cfg.transplant.freeze,
        &mut sink,
    )?;
    let best = &outcome.best;
    let direction = Direction::primary(cfg.topology);
    let beam = cfg.train.test_beam;
    let (_, dev) = evaluate_split(&best.graph, &best.params, &examples(&splits.dev), direction, beam)?;
    let test = if splits.test.is_empty() {
        None
    } else {
        Some(evaluate_split(&best.graph, &best.params, &examples(&splits.test), direction, beam)?.1)
    };
    let summary = RunSummary {
        name: cfg.name.clone(),
        seed,
        topology: cfg.topology.name().to_string(),
        ctc: graph.has_ctc(),
        scheme: cfg.transplant.scheme().label(),
        steps: outcome.last.step,
        best_step: best.step,
        best_checkpoint: crate::transplant::checkpoint_name(best.step),
        best_dev_bleu: outcome.best_row().dev.bleu,
        train_examples: outcome.train_kept,
        train_filtered: outcome.train_filtered,
        final_scores: FinalScores {
            direction,
            beam,
            dev,
            test,
        },
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(RunRecord {
        rows: outcome.rows,
        summary,
        dir,
    })
}

/// Trains every seed of `cfg`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let splits = cfg.data.load()?;
    cfg.seeds.iter().map(|&s| train_seed(cfg, s, &splits)).collect()
}

/// Writes the initialized (grafted) model of one seed as `ckpt-0` in `dir`, with its report.
pub fn cmd_transplant(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<TransplantReport> {
    cfg.validate()?;
    let (graph, params, report) = initialize(cfg, seed)?;
    let report = report.unwrap_or_else(|| TransplantReport {
        fresh: params.names().map(str::to_string).collect(),
        ..Default::default()
    });
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = Checkpoint {
        graph,
        params,
        optimizer: None,
        step: 0,
        dev_history: Vec::new(),
    };
    ckpt.save(&dir.join(crate::transplant::checkpoint_name(0)))?;
    crate::transplant::write_best_marker(dir, 0)?;
    write_json(&dir.join(TRANSPLANT_FILE), &report)?;
    Ok(report)
}

/// Writes the configured corpus as `train/`, `dev/` and `test/` under `dir`.
pub fn cmd_generate_data(cfg: &ExperimentConfig, dir: &Path) -> Result<Splits> {
    if cfg.data.dir.is_some() {
        return Err(Error::Config("generate-data needs a generated corpus, not data.dir".into()));
    }
    let splits = cfg.data.load()?;
    let gen = cfg.data.generation();
    for name in SPLIT_NAMES {
        save_dataset(&dir.join(name), splits.get(name)?, Some(&gen))?;
    }
    Ok(splits)
}

/// Reads `run.json` of a finished run.
pub fn load_summary(run_dir: &Path) -> Result<RunSummary> {
    let path = run_dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
