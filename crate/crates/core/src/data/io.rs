//! Text format: `examples.tsv` holds one example per line with six
//! tab-separated fields
//!
//! ```text
//! id  T  F  x[0][0] x[0][1] ... x[T-1][F-1]  transcript tokens  translation tokens
//! ```
//!
//! Frames are written row-major in shortest round-trip decimal form, so a
//! save/load cycle is exact. `manifest.json` stores the vocabularies, the
//! cipher and (when known) the generation parameters.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ExamplePair, FeatureSequence, GenerationParams, Role, TokenSequence};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const EXAMPLES_FILE: &str = "examples.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_examples: usize,
    pub generation: Option<GenerationParams>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub cipher: Vec<usize>,
}

fn format_line(ds: &Dataset, ex: &ExamplePair) -> String {
    let frames: Vec<String> = ex.x.frames.data().iter().map(|v| v.to_string()).collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        ex.id,
        ex.x.len(),
        ex.x.dim(),
        frames.join(" "),
        ds.src_vocab.render(&ex.f.ids),
        ds.tgt_vocab.render(&ex.e.ids)
    )
}

fn parse_line(line: &str, src: &Vocabulary, tgt: &Vocabulary) -> Result<ExamplePair> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(Error::Parse(format!("expected 6 fields, got {}", fields.len())));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let (id, t, f) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
    let frames = fields[3]
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if frames.len() != t * f {
        return Err(Error::Parse(format!("example {id}: {} values for {t} x {f} frames", frames.len())));
    }
    Ok(ExamplePair {
        id,
        x: FeatureSequence::new(Tensor::matrix(t, f, frames)?)?,
        f: TokenSequence::new(src.parse(fields[4])?, Role::Transcript, src)?,
        e: TokenSequence::new(tgt.parse(fields[5])?, Role::Translation, tgt)?,
    })
}

/// Writes `examples.tsv` and `manifest.json` into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, ds: &Dataset, generation: Option<&GenerationParams>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(EXAMPLES_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for ex in &ds.examples {
        writeln!(w, "{}", format_line(ds, ex)).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_examples: ds.len(),
        generation: generation.cloned(),
        src_vocab: ds.src_vocab.clone(),
        tgt_vocab: ds.tgt_vocab.clone(),
        cipher: ds.cipher.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{path:?}: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "dataset format version {} not supported",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(EXAMPLES_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut examples = Vec::with_capacity(manifest.n_examples);
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.is_empty() {
            continue;
        }
        let ex = parse_line(&line, &manifest.src_vocab, &manifest.tgt_vocab)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        examples.push(ex);
    }
    if examples.len() != manifest.n_examples {
        return Err(Error::Parse(format!(
            "manifest lists {} examples, file has {}",
            manifest.n_examples,
            examples.len()
        )));
    }
    Ok(Dataset {
        examples,
        src_vocab: manifest.src_vocab,
        tgt_vocab: manifest.tgt_vocab,
        cipher: manifest.cipher,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    #[test]
    fn round_trip_is_exact() {
        let params = GenerationParams {
            n_examples: 12,
            ..GenerationParams::default()
        };
        let ds = generate(&params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, Some(&params)).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
        assert_eq!(load_manifest(dir.path()).unwrap().generation, Some(params));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let ds = generate(&GenerationParams {
            n_examples: 3,
            ..GenerationParams::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds, None).unwrap();
        let path = dir.path().join(EXAMPLES_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        fs::write(&path, format!("{first}\n")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse(_))));
        fs::write(&path, format!("{}\n", &first[..first.len() / 2])).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
