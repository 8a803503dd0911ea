use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::compare::{cmd_compare, render_table};
use super::config::ExperimentConfig;
use super::eval::{cmd_eval, EvalDirection, EvalRequest};
use super::run::{cmd_generate_data, cmd_train, cmd_transplant};
use crate::data::load_dataset;
use crate::error::{Error, Result};
use crate::models::Topology;
use crate::transplant::TransplantScheme;

#[derive(Debug, Parser)]
#[command(
    name = "e2e-st",
    version,
    about = "Train, transplant, decode and compare end-to-end speech translation models",
    after_help = "Any config key can be overridden with a flag of the same dotted name, \
                  e.g. --model.enc_hidden 32 or --train.epochs=5."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got `{s}`")),
    }
}

/// Flags shared by every subcommand that reads an experiment config.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Auxiliary CTC loss.
    #[arg(long, value_parser = on_off, value_name = "on|off")]
    pub ctc: Option<bool>,
    #[arg(long)]
    pub topology: Option<Topology>,
    /// Grafts joined by `+`, e.g. `asr_enc+mt_dec`, or `none`.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, value_parser = on_off, value_name = "on|off")]
    pub adapter: Option<bool>,
    /// Experiment name, used for run directories.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured seed and write run directories.
    Train(Common),
    /// Decode a split with a checkpoint and score it.
    Eval(EvalArgs),
    /// Tabulate finished runs of several experiments.
    Compare(CompareArgs),
    /// Write the configured synthetic corpus to disk.
    GenerateData(Common),
    /// Write the initialized model of a transplant scheme without training.
    Transplant(Common),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint file or run directory (the recognizer for `cascade`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Translation checkpoint for `cascade`.
    #[arg(long)]
    pub mt_checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "st", value_name = "st|asr|mt|cascade")]
    pub direction: EvalDirection,
    #[arg(long, default_value = "test", value_name = "train|dev|test")]
    pub split: String,
    #[arg(long, default_value_t = 12)]
    pub beam: usize,
    /// Dataset directory written by `generate-data` (a split subdirectory or its parent).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Experiment configs, one per table row.
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    /// Where compare.json and compare.txt go; defaults to the first experiment's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

type Overrides = Vec<(String, String)>;

/// Splits `--section.key value` and `--section.key=value` pairs out of `args`.
pub fn extract_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let dotted = a.to_str().and_then(|s| s.strip_prefix("--")).filter(|s| {
            let key = s.split('=').next().unwrap_or("");
            key.contains('.') && !key.contains('/')
        });
        match dotted {
            Some(s) => match s.split_once('=') {
                Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
                None => {
                    let v = it
                        .next()
                        .and_then(|v| v.into_string().ok())
                        .ok_or_else(|| Error::Config(format!("--{s} needs a value")))?;
                    overrides.push((s.to_string(), v));
                }
            },
            None => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

impl Common {
    /// Named flags as config overrides, applied after dotted ones.
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        if let Some(s) = self.seed {
            o.push(("seeds".into(), format!("[{s}]")));
        }
        if let Some(p) = &self.out {
            o.push(("out_dir".into(), toml_string(&p.to_string_lossy())));
        }
        if let Some(c) = self.ctc {
            o.push(("model.ctc".into(), c.to_string()));
        }
        if let Some(t) = self.topology {
            o.push(("topology".into(), toml_string(t.name())));
        }
        if let Some(s) = &self.scheme {
            let grafts = TransplantScheme::parse_grafts(s)?;
            let list: Vec<String> = grafts.iter().map(|g| toml_string(g.name())).collect();
            o.push(("transplant.grafts".into(), format!("[{}]", list.join(", "))));
        }
        if let Some(a) = self.adapter {
            o.push(("transplant.adapter".into(), a.to_string()));
        }
        if let Some(n) = &self.name {
            o.push(("name".into(), toml_string(n)));
        }
        Ok(o)
    }

    pub fn load(&self, dotted: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut all = dotted.to_vec();
        all.extend(self.overrides()?);
        ExperimentConfig::load(self.config.as_deref(), &all)
    }
}

fn resolve_split_dir(data: &Path, split: &str) -> PathBuf {
    let nested = data.join(split);
    if nested.is_dir() {
        nested
    } else {
        data.to_path_buf()
    }
}

/// Runs one command; returns the text to print.
pub fn execute(cli: Cli, dotted: &[(String, String)]) -> Result<String> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load(dotted)?;
            let records = cmd_train(&cfg)?;
            let mut out = String::new();
            for r in records {
                let s = &r.summary;
                let test = s.final_scores.test.as_ref().map_or("-".to_string(), |t| format!("{:.2}", t.bleu));
                out.push_str(&format!(
                    "{}: best {} (dev BLEU {:.2} at beam {}, test BLEU {test})\n",
                    r.dir.display(),
                    s.best_checkpoint,
                    s.final_scores.dev.bleu,
                    s.final_scores.beam,
                ));
            }
            Ok(out)
        }
        Command::Eval(args) => {
            let data = match &args.data {
                Some(d) => load_dataset(&resolve_split_dir(d, &args.split))?,
                None => args.common.load(dotted)?.data.load()?.get(&args.split)?.clone(),
            };
            let out_dir = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let req = EvalRequest {
                checkpoint: args.checkpoint,
                mt_checkpoint: args.mt_checkpoint,
                direction: args.direction,
                split: args.split,
                beam: args.beam,
                out_dir,
            };
            let output = cmd_eval(&req, &data)?;
            let r = &output.report;
            Ok(format!(
                "{} {} beam {}: BLEU {:.2} TER {:.2} WER {:.2} ({} sentences)\n",
                output.direction, output.split, output.beam, r.bleu, r.ter, r.wer, r.sentences
            ))
        }
        Command::Compare(args) => {
            let configs = args
                .configs
                .iter()
                .map(|p| ExperimentConfig::load(Some(p), dotted))
                .collect::<Result<Vec<_>>>()?;
            let out = args.out.unwrap_or_else(|| configs[0].out_dir.clone());
            let rows = cmd_compare(&configs, &out)?;
            Ok(render_table(&rows))
        }
        Command::GenerateData(common) => {
            let cfg = common.load(dotted)?;
            let dir = cfg.out_dir.join("data");
            let s = cmd_generate_data(&cfg, &dir)?;
            Ok(format!(
                "{}: {} train, {} dev, {} test\n",
                dir.display(),
                s.train.len(),
                s.dev.len(),
                s.test.len()
            ))
        }
        Command::Transplant(common) => {
            let cfg = common.load(dotted)?;
            let seed = cfg.seeds[0];
            let dir = cfg.out_dir.join("runs").join(format!("{}-init", cfg.run_name(seed)));
            let report = cmd_transplant(&cfg, seed, &dir)?;
            Ok(format!(
                "{}: {} grafted, {} reinitialized, {} fresh\n",
                dir.display(),
                report.grafted.len(),
                report.reinitialized.len(),
                report.fresh.len()
            ))
        }
    }
}

/// Parses `args` (program name first), runs the command, prints its output
/// or the error, and returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> u8 {
    let (rest, dotted) = match extract_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code as u8;
        }
    };
    match execute(cli, &dotted) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
