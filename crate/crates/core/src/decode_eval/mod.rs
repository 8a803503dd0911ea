//! Greedy and beam search, the recognize-then-translate pipeline, and
//! BLEU/TER/WER scoring.

mod decode;
mod metrics;

pub use decode::{
    beam_decode, cascade, greedy_decode, normalized_score, CascadeOutput, Direction, Hypothesis, SearchOptions,
    Source,
};
pub use metrics::{
    bleu, edit_distance, score, score_lines, ter, ter_edits, tokenize, wer, BleuReport, ErrorRate, MetricReport,
    MAX_ORDER, MAX_SHIFT_LEN,
};
