use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ExamplePair, FeatureSequence, Role, TokenSequence};
use super::vocab::PAD;
use crate::ctc::min_frames;
use crate::error::{Error, Result};
use crate::layers::pooled_length;
use crate::numerics::Tensor;

/// How CTC feasibility is decided when filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtcFilter {
    /// Keep when some alignment exists: `J + repeats <= T'`.
    Exact,
    /// Keep only when the full blank-interleaved sequence fits: `2J + 1 <= T'`.
    Conservative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Maximum transcript/translation length in tokens.
    pub max_len: usize,
    /// Number of width-2 time pools applied by the speech encoder.
    pub pools: usize,
    /// Drop examples whose transcript cannot be aligned by CTC after pooling.
    pub ctc_filter: Option<CtcFilter>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            batch_size: 16,
            max_len: 75,
            pools: 2,
            ctc_filter: Some(CtcFilter::Exact),
        }
    }
}

/// Padded group of examples. Frames are stored as a `B x T_max x F` tensor,
/// token sequences are right-padded with [`PAD`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub frames: Tensor,
    pub frame_lengths: Vec<usize>,
    pub transcripts: Vec<Vec<usize>>,
    pub transcript_lengths: Vec<usize>,
    pub translations: Vec<Vec<usize>>,
    pub translation_lengths: Vec<usize>,
}

fn pad_tokens(seqs: &[&[usize]], extra: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0) + extra;
    let padded = seqs
        .iter()
        .map(|s| {
            let mut v = s.to_vec();
            v.resize(width, PAD);
            v
        })
        .collect();
    (padded, seqs.iter().map(|s| s.len()).collect())
}

impl Batch {
    pub fn from_examples(examples: &[&ExamplePair]) -> Result<Batch> {
        Self::padded(examples, 0, 0)
    }

    /// Like [`Batch::from_examples`] with `extra_frames`/`extra_tokens` more padding than needed.
    pub fn padded(examples: &[&ExamplePair], extra_frames: usize, extra_tokens: usize) -> Result<Batch> {
        if examples.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let dim = examples[0].x.dim();
        let t_max = examples.iter().map(|e| e.x.len()).max().unwrap() + extra_frames;
        let mut data = vec![0.0; examples.len() * t_max * dim];
        for (b, ex) in examples.iter().enumerate() {
            if ex.x.dim() != dim {
                return Err(Error::Shape("mixed feature dimensions in batch".into()));
            }
            let src = ex.x.frames.data();
            data[b * t_max * dim..b * t_max * dim + src.len()].copy_from_slice(src);
        }
        let fs: Vec<&[usize]> = examples.iter().map(|e| e.f.ids.as_slice()).collect();
        let es: Vec<&[usize]> = examples.iter().map(|e| e.e.ids.as_slice()).collect();
        let (transcripts, transcript_lengths) = pad_tokens(&fs, extra_tokens);
        let (translations, translation_lengths) = pad_tokens(&es, extra_tokens);
        Ok(Batch {
            ids: examples.iter().map(|e| e.id).collect(),
            frames: Tensor::new(vec![examples.len(), t_max, dim], data)?,
            frame_lengths: examples.iter().map(|e| e.x.len()).collect(),
            transcripts,
            transcript_lengths,
            translations,
            translation_lengths,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Example `b` with all padding stripped.
    pub fn example(&self, b: usize) -> Result<ExamplePair> {
        let shape = self.frames.shape();
        let (t_max, dim) = (shape[1], shape[2]);
        let t = self.frame_lengths[b];
        let start = b * t_max * dim;
        let frames = Tensor::matrix(t, dim, self.frames.data()[start..start + t * dim].to_vec())?;
        Ok(ExamplePair {
            id: self.ids[b],
            x: FeatureSequence::new(frames)?,
            f: TokenSequence {
                ids: self.transcripts[b][..self.transcript_lengths[b]].to_vec(),
                role: Role::Transcript,
            },
            e: TokenSequence {
                ids: self.translations[b][..self.translation_lengths[b]].to_vec(),
                role: Role::Translation,
            },
        })
    }
}

/// Indices surviving the length and CTC filters, with counts of what was dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<usize>,
    pub too_long: usize,
    pub ctc_infeasible: usize,
}

pub fn filter(dataset: &Dataset, opts: &BatchOptions) -> FilterReport {
    let mut report = FilterReport {
        kept: Vec::new(),
        too_long: 0,
        ctc_infeasible: 0,
    };
    for (i, ex) in dataset.examples.iter().enumerate() {
        if ex.f.len() > opts.max_len || ex.e.len() > opts.max_len {
            report.too_long += 1;
            continue;
        }
        if let Some(mode) = opts.ctc_filter {
            let available = pooled_length(ex.x.len(), opts.pools);
            let required = match mode {
                CtcFilter::Exact => min_frames(&ex.f.ids),
                CtcFilter::Conservative => 2 * ex.f.len() + 1,
            };
            if required > available {
                report.ctc_infeasible += 1;
                continue;
            }
        }
        report.kept.push(i);
    }
    report
}

/// Filtered, padded batches in dataset order.
#[derive(Debug, Clone)]
pub struct Batches {
    pub batches: Vec<Batch>,
    pub report: FilterReport,
}

pub fn batch(dataset: &Dataset, opts: &BatchOptions) -> Result<Batches> {
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let report = filter(dataset, opts);
    if report.kept.is_empty() {
        return Err(Error::Empty("no examples left after filtering".into()));
    }
    let batches = report
        .kept
        .chunks(opts.batch_size)
        .map(|idx| {
            let refs: Vec<&ExamplePair> = idx.iter().map(|&i| &dataset.examples[i]).collect();
            Batch::from_examples(&refs)
        })
        .collect::<Result<_>>()?;
    Ok(Batches { batches, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenerationParams};

    fn ds() -> Dataset {
        generate(&GenerationParams {
            n_examples: 30,
            ..GenerationParams::default()
        })
        .unwrap()
    }

    #[test]
    fn nothing_filtered_when_short() {
        let d = ds();
        let opts = BatchOptions {
            batch_size: 8,
            max_len: 75,
            pools: 0,
            ctc_filter: Some(CtcFilter::Exact),
        };
        let b = batch(&d, &opts).unwrap();
        assert_eq!(b.report.too_long + b.report.ctc_infeasible, 0);
        assert_eq!(b.batches.len(), 4);
        assert_eq!(b.batches.iter().map(Batch::len).sum::<usize>(), 30);
    }

    #[test]
    fn long_and_infeasible_filtered() {
        let mut d = ds();
        let opts = BatchOptions {
            batch_size: 4,
            max_len: 6,
            pools: 2,
            ctc_filter: Some(CtcFilter::Conservative),
        };
        let r = filter(&d, &opts);
        let long = d.examples.iter().filter(|e| e.f.len() > 6).count();
        assert_eq!(r.too_long, long);
        for ex in d.examples.iter().filter(|e| e.f.len() <= 6) {
            let tp = pooled_length(ex.x.len(), 2);
            assert_eq!(r.kept.contains(&ex.id), 2 * ex.f.len() < tp);
        }
        // a transcript with a repeat that cannot fit
        let ex = &mut d.examples[0];
        let tok = ex.f.ids[0];
        ex.f.ids = vec![tok; 3];
        ex.x = FeatureSequence::new(Tensor::matrix(8, ex.x.dim(), vec![0.0; 8 * ex.x.dim()]).unwrap()).unwrap();
        let exact = BatchOptions {
            ctc_filter: Some(CtcFilter::Exact),
            max_len: 75,
            ..opts
        };
        // 8 frames -> 2 after two pools; "a a a" needs 5
        assert!(!filter(&d, &exact).kept.contains(&0));
    }

    #[test]
    fn empty_after_filter_is_error() {
        let d = ds();
        let opts = BatchOptions {
            max_len: 0,
            ..BatchOptions::default()
        };
        assert!(matches!(batch(&d, &opts), Err(Error::Empty(_))));
    }

    #[test]
    fn unpadding_recovers_examples() {
        let d = ds();
        let refs: Vec<&ExamplePair> = d.examples[..5].iter().collect();
        let b = Batch::padded(&refs, 7, 3).unwrap();
        for (i, ex) in d.examples[..5].iter().enumerate() {
            assert_eq!(&b.example(i).unwrap(), ex);
        }
        assert!(b.transcripts.iter().all(|t| t.len() == b.transcripts[0].len()));
    }
}
