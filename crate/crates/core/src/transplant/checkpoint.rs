//! Checkpoint file layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "E2ESTCKP"
//! version    u32
//! header     u64 length + UTF-8 JSON (graph, step, dev history, store seed, optimizer scalars)
//! sections   u32 count, then per section:
//!              name: u32 length + UTF-8
//!              tensors: u32 count, then per tensor:
//!                name: u32 length + UTF-8
//!                rank: u32, extents: u64 each
//!                count: u64, values: f64 each
//! checksum   32 bytes SHA-256 of everything above
//! ```
//!
//! Sections are `params`, and when optimizer state is saved also `adam.m` and `adam.v`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Component, ModelGraph};
use crate::numerics::{OptimizerState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"E2ESTCKP";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// A saved model: wiring, parameters and training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub graph: ModelGraph,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
    pub step: usize,
    /// Dev BLEU of every evaluation so far.
    pub dev_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    graph: ModelGraph,
    step: usize,
    dev_history: Vec<f64>,
    store_seed: u64,
    optimizer: Option<OptimizerScalars>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerScalars {
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_section<'a>(buf: &mut Vec<u8>, name: &str, tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) {
    let tensors: Vec<_> = tensors.collect();
    put_str(buf, name);
    put_u32(buf, tensors.len() as u32);
    for (n, t) in tensors {
        put_str(buf, n);
        put_u32(buf, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(buf, d as u64);
        }
        put_u64(buf, t.len() as u64);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    /// Serializes to bytes, checksum included.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            graph: self.graph.clone(),
            step: self.step,
            dev_history: self.dev_history.clone(),
            store_seed: self.params.seed(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerScalars {
                step: o.step,
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
            }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let mut buf = Vec::with_capacity(64 + json.len() + 8 * self.params.num_scalars());
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        put_u64(&mut buf, json.len() as u64);
        buf.extend_from_slice(&json);
        let sections = if self.optimizer.is_some() { 3 } else { 1 };
        put_u32(&mut buf, sections);
        put_section(&mut buf, "params", self.params.iter());
        if let Some(o) = &self.optimizer {
            put_section(&mut buf, "adam.m", o.first_moment.iter().map(|(n, t)| (n.as_str(), t)));
            put_section(&mut buf, "adam.v", o.second_moment.iter().map(|(n, t)| (n.as_str(), t)));
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    /// Parses bytes written by [`Checkpoint::to_bytes`]; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let corrupt = |reason: String| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: 12,
        };
        let parse = |r: &mut Reader<'_>| -> std::result::Result<Checkpoint, String> {
            let hlen = r.u64()? as usize;
            let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| format!("header: {e}"))?;
            let nsec = r.u32()?;
            let mut sections: IndexMap<String, IndexMap<String, Tensor>> = IndexMap::new();
            for _ in 0..nsec {
                let name = r.string()?;
                let count = r.u32()?;
                let mut tensors = IndexMap::new();
                for _ in 0..count {
                    let tname = r.string()?;
                    let rank = r.u32()? as usize;
                    let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
                    let n = r.u64()? as usize;
                    let expected = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                    if expected != Some(n) || rank == 0 {
                        return Err(format!("tensor `{tname}`: shape {shape:?} does not hold {n} values"));
                    }
                    let raw = r.take(n.checked_mul(8).ok_or("tensor too large")?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    let t = Tensor::new(shape, data).map_err(|e| format!("tensor `{tname}`: {e}"))?;
                    if tensors.insert(tname.clone(), t).is_some() {
                        return Err(format!("duplicate tensor `{tname}`"));
                    }
                }
                if sections.insert(name.clone(), tensors).is_some() {
                    return Err(format!("duplicate section `{name}`"));
                }
            }
            if r.pos != r.bytes.len() {
                return Err("trailing bytes".into());
            }
            let params_map = sections.shift_remove("params").ok_or("missing params section")?;
            let mut params = ParamStore::new(header.store_seed);
            for (n, t) in params_map {
                if Component::of_param(&n).is_none() {
                    return Err(format!("parameter `{n}` has no known component prefix"));
                }
                params.insert(n, t).map_err(|e| e.to_string())?;
            }
            header.graph.check_store(&params).map_err(|e| e.to_string())?;
            let optimizer = match header.optimizer {
                None => None,
                Some(s) => {
                    let m = sections.shift_remove("adam.m").ok_or("missing adam.m section")?;
                    let v = sections.shift_remove("adam.v").ok_or("missing adam.v section")?;
                    for moments in [&m, &v] {
                        for (n, t) in moments {
                            match params.get(n) {
                                Some(p) if p.shape() == t.shape() => {}
                                _ => return Err(format!("optimizer moment `{n}` does not match a parameter")),
                            }
                        }
                    }
                    Some(OptimizerState {
                        first_moment: m,
                        second_moment: v,
                        step: s.step,
                        learning_rate: s.learning_rate,
                        beta1: s.beta1,
                        beta2: s.beta2,
                        epsilon: s.epsilon,
                    })
                }
            };
            if let Some(extra) = sections.keys().next() {
                return Err(format!("unexpected section `{extra}`"));
            }
            Ok(Checkpoint {
                graph: header.graph,
                params,
                optimizer,
                step: header.step,
                dev_history: header.dev_history,
            })
        };
        parse(&mut r).map_err(corrupt)
    }

    /// Writes atomically: a temporary sibling is written, synced and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = tmp_path(path);
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

/// File name of the checkpoint taken at `step`.
pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt-{step}")
}

pub const BEST_MARKER: &str = "best";

/// Records `ckpt-<step>` as the best checkpoint of `run_dir`.
pub fn write_best_marker(run_dir: &Path, step: usize) -> Result<()> {
    let path = run_dir.join(BEST_MARKER);
    let tmp = tmp_path(&path);
    fs::write(&tmp, format!("{}\n", checkpoint_name(step))).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

/// Path of the checkpoint named by the `best` marker of `run_dir`.
pub fn best_checkpoint_path(run_dir: &Path) -> Result<PathBuf> {
    let path = run_dir.join(BEST_MARKER);
    let name = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let name = name.trim();
    if !name.starts_with("ckpt-") || name.contains('/') {
        return Err(Error::Parse(format!("{}: bad best marker {name:?}", path.display())));
    }
    Ok(run_dir.join(name))
}

/// Resolves a run directory to its best checkpoint; any other path is taken as a checkpoint file.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        best_checkpoint_path(path)
    } else {
        Ok(path.to_path_buf())
    }
}
