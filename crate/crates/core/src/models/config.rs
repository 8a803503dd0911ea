use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model wirings: the five speech-translation topologies plus standalone ASR and MT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Direct,
    Asr,
    Mt,
    One2many,
    Many2one,
    TiedCascade,
    TiedTriangle,
}

impl Topology {
    pub const ALL: [Topology; 7] = [
        Topology::Direct,
        Topology::Asr,
        Topology::Mt,
        Topology::One2many,
        Topology::Many2one,
        Topology::TiedCascade,
        Topology::TiedTriangle,
    ];

    /// The end-to-end speech-translation architectures.
    pub const SPEECH_TRANSLATION: [Topology; 5] = [
        Topology::Direct,
        Topology::One2many,
        Topology::Many2one,
        Topology::TiedCascade,
        Topology::TiedTriangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Topology::Direct => "direct",
            Topology::Asr => "asr",
            Topology::Mt => "mt",
            Topology::One2many => "one2many",
            Topology::Many2one => "many2one",
            Topology::TiedCascade => "tied_cascade",
            Topology::TiedTriangle => "tied_triangle",
        }
    }

    pub fn is_tied(self) -> bool {
        matches!(self, Topology::TiedCascade | Topology::TiedTriangle)
    }

    pub fn has_speech_encoder(self) -> bool {
        self != Topology::Mt
    }

    pub fn has_text_encoder(self) -> bool {
        matches!(self, Topology::Mt | Topology::Many2one)
    }

    pub fn has_st_decoder(self) -> bool {
        self != Topology::Asr
    }

    pub fn has_asr_decoder(self) -> bool {
        matches!(
            self,
            Topology::Asr | Topology::One2many | Topology::TiedCascade | Topology::TiedTriangle
        )
    }

    /// Where an adapter layer goes for this topology, if it takes one.
    pub fn adapter_position(self) -> Option<AdapterPosition> {
        match self {
            Topology::Direct | Topology::One2many | Topology::Many2one => Some(AdapterPosition::EncoderTop),
            Topology::TiedCascade | Topology::TiedTriangle => Some(AdapterPosition::AsrDecoderTop),
            Topology::Asr | Topology::Mt => None,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTopology(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterPosition {
    /// Between the speech encoder and every decoder attending to it.
    EncoderTop,
    /// Between the first (ASR) decoder's states and the second decoder.
    AsrDecoderTop,
}

impl AdapterPosition {
    pub fn name(self) -> &'static str {
        match self {
            AdapterPosition::EncoderTop => "encoder_top",
            AdapterPosition::AsrDecoderTop => "asr_decoder_top",
        }
    }
}

impl FromStr for AdapterPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder_top" => Ok(AdapterPosition::EncoderTop),
            "asr_decoder_top" => Ok(AdapterPosition::AsrDecoderTop),
            _ => Err(Error::Config(format!("unknown adapter position `{s}`"))),
        }
    }
}

/// Sizes and loss settings shared by every topology.
///
/// Vocabulary sizes count every id, reserved symbols and the blank included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden size per direction of every encoder BLSTM.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    /// Number of width-2 time pools in the speech encoder.
    pub pools: usize,
    pub text_enc_layers: usize,
    pub dec_hidden: usize,
    pub dec_layers: usize,
    pub att_dim: usize,
    /// Weight of the translation task in multi-task losses.
    pub lambda: f64,
    pub ctc: bool,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 12,
            src_vocab_size: 16,
            tgt_vocab_size: 16,
            embed_dim: 32,
            enc_hidden: 64,
            enc_layers: 3,
            pools: 2,
            text_enc_layers: 1,
            dec_hidden: 64,
            dec_layers: 1,
            att_dim: 64,
            lambda: 0.5,
            ctc: false,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }
}

impl ModelConfig {
    /// Full-size dimensions of the original recipe.
    pub fn paper_preset() -> Self {
        ModelConfig {
            embed_dim: 620,
            enc_hidden: 1024,
            enc_layers: 6,
            pools: 3,
            dec_hidden: 1024,
            dec_layers: 1,
            att_dim: 1024,
            dropout: 0.3,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("enc_hidden", self.enc_hidden),
            ("enc_layers", self.enc_layers),
            ("pools", self.pools),
            ("text_enc_layers", self.text_enc_layers),
            ("dec_hidden", self.dec_hidden),
            ("dec_layers", self.dec_layers),
            ("att_dim", self.att_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        // reserved ids plus blank plus at least one content token
        for (name, v) in [("src_vocab_size", self.src_vocab_size), ("tgt_vocab_size", self.tgt_vocab_size)] {
            if v < 5 {
                return Err(Error::Config(format!("model.{name} must be at least 5, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("model.lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "model.label_smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }

    pub fn enc_output_dim(&self) -> usize {
        2 * self.enc_hidden
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_names_round_trip() {
        for t in Topology::ALL {
            assert_eq!(t.name().parse::<Topology>().unwrap(), t);
        }
        assert!(matches!("transformer".parse::<Topology>(), Err(Error::UnknownTopology(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::paper_preset().validate().is_ok());
        assert!(ModelConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { pools: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }
}
