use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::error::{Error, Result};
use crate::models::{AdapterPosition, Component, ModelGraph};
use crate::numerics::{ParamStore, Tensor};

/// One pre-trained component copied into a target model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Graft {
    /// ASR speech encoder into the speech encoder.
    AsrEnc,
    /// ASR decoder into the transcript decoder.
    AsrDec,
    /// MT text encoder into the text encoder.
    MtEnc,
    /// MT decoder into the translation decoder.
    MtDec,
    /// ASR decoder into the translation decoder; embedding and output
    /// layers are kept fresh when the vocabularies differ in size.
    AsrDecSt,
}

impl Graft {
    pub const ALL: [Graft; 5] = [Graft::AsrEnc, Graft::AsrDec, Graft::MtEnc, Graft::MtDec, Graft::AsrDecSt];

    pub fn name(self) -> &'static str {
        match self {
            Graft::AsrEnc => "asr_enc",
            Graft::AsrDec => "asr_dec",
            Graft::MtEnc => "mt_enc",
            Graft::MtDec => "mt_dec",
            Graft::AsrDecSt => "asr_dec_st",
        }
    }

    pub fn source(self) -> Component {
        match self {
            Graft::AsrEnc => Component::SpeechEncoder,
            Graft::AsrDec | Graft::AsrDecSt => Component::DecoderAsr,
            Graft::MtEnc => Component::TextEncoder,
            Graft::MtDec => Component::DecoderSt,
        }
    }

    pub fn target(self) -> Component {
        match self {
            Graft::AsrEnc => Component::SpeechEncoder,
            Graft::AsrDec => Component::DecoderAsr,
            Graft::MtEnc => Component::TextEncoder,
            Graft::MtDec | Graft::AsrDecSt => Component::DecoderSt,
        }
    }

    /// Whether the target parameter `suffix` may keep its fresh value on a shape mismatch.
    fn shape_flexible(self, suffix: &str) -> bool {
        self == Graft::AsrDecSt && matches!(suffix, "embed" | "out.w" | "out.b")
    }

    /// Which pre-trained model a graft reads from.
    pub fn source_model(self) -> SourceModel {
        match self {
            Graft::AsrEnc | Graft::AsrDec | Graft::AsrDecSt => SourceModel::Asr,
            Graft::MtEnc | Graft::MtDec => SourceModel::Mt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceModel {
    Asr,
    Mt,
}

impl fmt::Display for Graft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Graft {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Graft::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown graft `{s}`")))
    }
}

/// Which components to graft, whether to add an adapter, and which parameters to skip or freeze.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransplantScheme {
    pub grafts: Vec<Graft>,
    pub adapter: bool,
    /// Parameters whose name contains any of these strings are left fresh.
    pub exclude: Vec<String>,
    /// Parameters whose name starts with any of these prefixes are not updated during fine-tuning.
    pub freeze: Vec<String>,
}

impl TransplantScheme {
    /// Parses `asr_enc+mt_dec` style lists; `none` is the empty scheme.
    pub fn parse_grafts(s: &str) -> Result<Vec<Graft>> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Vec::new());
        }
        s.split(['+', ',']).map(|p| p.trim().parse()).collect()
    }

    /// Short label such as `asr_enc+mt_dec+adapter`.
    pub fn label(&self) -> String {
        let mut parts: Vec<&str> = self.grafts.iter().map(|g| g.name()).collect();
        if self.adapter {
            parts.push("adapter");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn needs(&self, model: SourceModel) -> bool {
        self.grafts.iter().any(|g| g.source_model() == model)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }

    fn is_excluded(&self, name: &str) -> bool {
        self.exclude.iter().any(|p| name.contains(p.as_str()))
    }
}

/// What a transplant did to each target parameter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransplantReport {
    /// Target names overwritten with pre-trained values.
    pub grafted: Vec<String>,
    /// Target names under a grafted component kept fresh because of a vocabulary size difference.
    pub reinitialized: Vec<String>,
    /// Target names left at their fresh initialization for any other reason.
    pub fresh: Vec<String>,
}

/// Adds an adapter at `position` and initializes its parameters in `store`.
pub fn insert_adapter(graph: &ModelGraph, store: &mut ParamStore, position: AdapterPosition) -> Result<ModelGraph> {
    let g = graph.with_adapter(position)?;
    g.init_missing(store)?;
    Ok(g)
}

/// Copies the grafted components of `sources` into `store`, a freshly
/// initialized store of `graph`. Every graft is validated before any value
/// is written, so on error `store` is unchanged.
pub fn apply_transplant(
    graph: &ModelGraph,
    store: &mut ParamStore,
    scheme: &TransplantScheme,
    sources: &[(Graft, &Checkpoint)],
) -> Result<TransplantReport> {
    graph.check_store(store)?;
    let present: BTreeSet<Component> = graph.components().into_iter().collect();
    let mut targets = BTreeSet::new();
    let mut writes: Vec<(String, Tensor)> = Vec::new();
    let mut reinitialized = Vec::new();
    for &(graft, ckpt) in sources {
        let (src, dst) = (graft.source(), graft.target());
        if !present.contains(&dst) {
            return Err(Error::Transplant(format!(
                "{graft}: {} has no {} component",
                graph.topology,
                dst.prefix()
            )));
        }
        if !targets.insert(dst) {
            return Err(Error::Transplant(format!("two grafts target {}", dst.prefix())));
        }
        if ckpt.params.names_with_prefix(src.prefix()).next().is_none() {
            return Err(Error::Transplant(format!(
                "{graft}: source {} checkpoint has no {} parameters",
                ckpt.graph.topology,
                src.prefix()
            )));
        }
        let names: Vec<String> = store.names_with_prefix(dst.prefix()).map(str::to_string).collect();
        for name in names {
            if scheme.is_excluded(&name) {
                continue;
            }
            let suffix = &name[dst.prefix().len()..];
            let src_name = format!("{}{suffix}", src.prefix());
            let target_shape = store.get(&name).expect("listed name").shape();
            match ckpt.params.get(&src_name) {
                Some(t) if t.shape() == target_shape => writes.push((name, t.clone())),
                Some(_) if graft.shape_flexible(suffix) => reinitialized.push(name),
                Some(t) => {
                    return Err(Error::Transplant(format!(
                        "{graft}: `{src_name}` is {:?} but `{name}` is {:?}",
                        t.shape(),
                        target_shape
                    )))
                }
                None => {
                    return Err(Error::Transplant(format!(
                        "{graft}: source has no `{src_name}` for `{name}`"
                    )))
                }
            }
        }
    }
    let grafted: Vec<String> = writes.iter().map(|(n, _)| n.clone()).collect();
    for (name, t) in writes {
        store.set(&name, t)?;
    }
    let touched: BTreeSet<&str> = grafted.iter().chain(&reinitialized).map(String::as_str).collect();
    let fresh = store.names().filter(|n| !touched.contains(n)).map(str::to_string).collect();
    Ok(TransplantReport {
        grafted,
        reinitialized,
        fresh,
    })
}
