use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::write_json;
use super::run::load_summary;
use crate::error::{Error, Result};
use crate::models::Topology;
use crate::transplant::{Graft, TransplantScheme};

pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_TXT: &str = "compare.txt";

/// One row of the comparison: an experiment summarized over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub ctc: bool,
    pub scheme: String,
    pub name: String,
    pub seeds: Vec<u64>,
    pub dev_bleu: f64,
    pub dev_ter: f64,
    pub test_bleu: Option<f64>,
    pub test_ter: Option<f64>,
}

impl CompareRow {
    pub fn label(&self) -> String {
        let mut s = format!("{} {}", self.method, if self.ctc { "+CTC" } else { "-CTC" });
        if !self.scheme.is_empty() {
            s.push_str(" | ");
            s.push_str(&self.scheme);
        }
        s
    }
}

/// Architecture names as used in result tables.
pub fn method_name(t: Topology) -> &'static str {
    match t {
        Topology::Direct => "direct",
        Topology::Asr => "ASR",
        Topology::Mt => "MT",
        Topology::One2many => "one-to-many",
        Topology::Many2one => "many-to-one",
        Topology::TiedCascade => "tied cascade",
        Topology::TiedTriangle => "tied triangle",
    }
}

fn graft_label(g: Graft) -> &'static str {
    match g {
        Graft::AsrEnc => "ASR enc.",
        Graft::AsrDec => "ASR dec.",
        Graft::MtEnc => "MT enc.",
        Graft::MtDec => "MT dec.",
        Graft::AsrDecSt => "ASR dec. (as ST dec.)",
    }
}

/// Human-readable pre-training scheme, empty for fresh initialization.
pub fn scheme_label(s: &TransplantScheme) -> String {
    let mut parts: Vec<&str> = s.grafts.iter().map(|&g| graft_label(g)).collect();
    if s.adapter {
        parts.push("adapter");
    }
    parts.join(" + ")
}

/// Median; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Reads the finished runs of every config and tabulates them.
pub fn compare_rows(configs: &[ExperimentConfig]) -> Result<Vec<CompareRow>> {
    if configs.len() < 2 {
        return Err(Error::Config("compare needs at least two experiments".into()));
    }
    let mut rows = Vec::new();
    for cfg in configs {
        let mut dev_bleu = Vec::new();
        let mut dev_ter = Vec::new();
        let mut test_bleu = Vec::new();
        let mut test_ter = Vec::new();
        let mut ctc = false;
        for &seed in &cfg.seeds {
            let s = load_summary(&cfg.run_dir(seed))?;
            ctc = s.ctc;
            dev_bleu.push(s.final_scores.dev.bleu);
            dev_ter.push(s.final_scores.dev.ter);
            if let Some(t) = &s.final_scores.test {
                test_bleu.push(t.bleu);
                test_ter.push(t.ter);
            }
        }
        let all_test = test_bleu.len() == cfg.seeds.len();
        rows.push(CompareRow {
            method: method_name(cfg.topology).to_string(),
            ctc,
            scheme: scheme_label(&cfg.transplant.scheme()),
            name: cfg.name.clone(),
            seeds: cfg.seeds.clone(),
            dev_bleu: median(&dev_bleu),
            dev_ter: median(&dev_ter),
            test_bleu: all_test.then(|| median(&test_bleu)),
            test_ter: all_test.then(|| median(&test_ter)),
        });
    }
    Ok(rows)
}

/// Aligned text table of `rows`.
pub fn render_table(rows: &[CompareRow]) -> String {
    let header = ["method", "seeds", "dev BLEU", "dev TER", "test BLEU", "test TER"];
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.label(),
                r.seeds.len().to_string(),
                format!("{:.2}", r.dev_bleu),
                format!("{:.2}", r.dev_ter),
                opt(r.test_bleu),
                opt(r.test_ter),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |c: &[String]| -> String {
        let mut s = format!("{:<w$}", c[0], w = width[0]);
        for (i, cell) in c.iter().enumerate().skip(1) {
            s.push_str(&format!("  {:>w$}", cell, w = width[i]));
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header.map(String::from));
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    out.push('\n');
    for c in &cells {
        out.push_str(&line(c));
    }
    out
}

/// Writes `compare.json` and `compare.txt` into `out_dir`.
pub fn cmd_compare(configs: &[ExperimentConfig], out_dir: &Path) -> Result<Vec<CompareRow>> {
    let rows = compare_rows(configs)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_json(&out_dir.join(COMPARE_JSON), &rows)?;
    let txt = out_dir.join(COMPARE_TXT);
    fs::write(&txt, render_table(&rows)).map_err(|e| Error::io(&txt, e))?;
    Ok(rows)
}
