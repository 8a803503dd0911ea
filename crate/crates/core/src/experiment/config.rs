use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate, load_dataset, split, Dataset, GenerationParams};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Topology};
use crate::transplant::{Graft, TrainSchedule, TransplantScheme};

/// Synthetic corpus and its split, or a directory written by `generate-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub noise_sigma: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub split_seed: u64,
    /// Load `train/`, `dev/` and `test/` from here instead of generating.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let g = GenerationParams::default();
        DataConfig {
            seed: g.seed,
            vocab_size: g.vocab_size,
            min_len: g.min_len,
            max_len: g.max_len,
            min_frames_per_token: g.min_frames_per_token,
            max_frames_per_token: g.max_frames_per_token,
            noise_sigma: g.noise_sigma,
            train: 500,
            dev: 50,
            test: 50,
            split_seed: 0,
            dir: None,
        }
    }
}

/// Train, dev and test portions of one corpus.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            _ => Err(Error::Config(format!("unknown split `{name}` (train, dev or test)"))),
        }
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

impl DataConfig {
    pub fn generation(&self) -> GenerationParams {
        GenerationParams {
            seed: self.seed,
            n_examples: self.train + self.dev + self.test,
            vocab_size: self.vocab_size,
            min_len: self.min_len,
            max_len: self.max_len,
            min_frames_per_token: self.min_frames_per_token,
            max_frames_per_token: self.max_frames_per_token,
            noise_sigma: self.noise_sigma,
        }
    }

    /// Generates (or loads) the corpus and splits it.
    pub fn load(&self) -> Result<Splits> {
        if let Some(dir) = &self.dir {
            return Ok(Splits {
                train: load_dataset(&dir.join("train"))?,
                dev: load_dataset(&dir.join("dev"))?,
                test: load_dataset(&dir.join("test"))?,
            });
        }
        if self.train == 0 || self.dev == 0 {
            return Err(Error::Config("data.train and data.dev must be positive".into()));
        }
        let ds = generate(&self.generation())?;
        let n = ds.len() as f64;
        let fractions = [self.train as f64 / n, self.dev as f64 / n, self.test as f64 / n];
        let (train, dev, test) = split(&ds, fractions, self.split_seed)?;
        Ok(Splits { train, dev, test })
    }
}

/// Transplant scheme plus where its source checkpoints live.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransplantConfig {
    pub grafts: Vec<Graft>,
    pub adapter: bool,
    pub exclude: Vec<String>,
    pub freeze: Vec<String>,
    /// ASR checkpoint file or run directory (its `best` checkpoint is used).
    pub asr_checkpoint: Option<PathBuf>,
    /// MT checkpoint file or run directory.
    pub mt_checkpoint: Option<PathBuf>,
}

impl TransplantConfig {
    pub fn scheme(&self) -> TransplantScheme {
        TransplantScheme {
            grafts: self.grafts.clone(),
            adapter: self.adapter,
            exclude: self.exclude.clone(),
            freeze: self.freeze.clone(),
        }
    }
}

/// Everything a run depends on; `(config, seed)` reproduces it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub topology: Topology,
    pub seeds: Vec<u64>,
    /// Runs are written to `<out_dir>/runs/<name>-s<seed>`.
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainSchedule,
    pub transplant: TransplantConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "direct".into(),
            topology: Topology::Direct,
            seeds: vec![1],
            out_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainSchedule::default(),
            transplant: TransplantConfig::default(),
        }
    }
}

/// Parses a command-line value as a TOML literal, falling back to a bare string.
fn literal(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key such as `model.enc_hidden` in a TOML table.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Reads an optional TOML file and applies `key = value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_key(&mut table, k, literal(v))?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("bad run name {:?}", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.data.dir.is_none() {
            self.data.generation().validate()?;
            let want = self.data.vocab_size + 4;
            let m = &self.model;
            if m.src_vocab_size != want || m.tgt_vocab_size != want || m.feature_dim != self.data.vocab_size {
                return Err(Error::VocabMismatch(format!(
                    "data.vocab_size {} needs model.src_vocab_size = model.tgt_vocab_size = {want} and model.feature_dim = {}",
                    self.data.vocab_size, self.data.vocab_size
                )));
            }
        }
        if let Some(d) = self.train.initial_enc_layers {
            if d == 0 || d > self.model.enc_layers {
                return Err(Error::Config(format!("train.initial_enc_layers {d} outside 1..={}", self.model.enc_layers)));
            }
            if self.transplant.grafts.contains(&Graft::AsrEnc) && d < self.model.enc_layers {
                return Err(Error::Config("encoder growth cannot start from a grafted encoder".into()));
            }
        }
        Ok(())
    }

    /// Same experiment restricted to one seed.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![seed],
            train: TrainSchedule { seed, ..self.train.clone() },
            ..self.clone()
        }
    }

    pub fn run_name(&self, seed: u64) -> String {
        format!("{}-s{seed}", self.name)
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join("runs").join(self.run_name(seed))
    }
}
