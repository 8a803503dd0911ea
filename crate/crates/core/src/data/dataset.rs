use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Frame-level input `x_1^T`, a `T x F` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
}

impl FeatureSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::Shape(format!("features must be T x F, got {:?}", frames.shape())));
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite("feature frames".into()));
        }
        Ok(FeatureSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Transcript,
    Translation,
}

/// Token ids without sentence markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, role: Role, vocab: &Vocabulary) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab.len() || vocab.is_reserved(i)) {
            return Err(Error::InvalidArgument(format!("reserved or unknown id {bad} inside sequence")));
        }
        Ok(TokenSequence { ids, role })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One speech/transcript/translation triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePair {
    pub id: usize,
    pub x: FeatureSequence,
    pub f: TokenSequence,
    pub e: TokenSequence,
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub seed: u64,
    pub n_examples: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub noise_sigma: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            seed: 1,
            n_examples: 600,
            vocab_size: 12,
            min_len: 3,
            max_len: 8,
            min_frames_per_token: 8,
            max_frames_per_token: 12,
            noise_sigma: 0.3,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab_size must be at least 4".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("bad length range {}..={}", self.min_len, self.max_len)));
        }
        if self.min_frames_per_token < 2 || self.min_frames_per_token > self.max_frames_per_token {
            return Err(Error::Config(format!(
                "bad frames-per-token range {}..={} (minimum is 2)",
                self.min_frames_per_token, self.max_frames_per_token
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A generated (or loaded) corpus together with its vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<ExamplePair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    /// `cipher[k]` is the target content index for source content index `k`.
    pub cipher: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.src_vocab.content_len()
    }

    /// Same vocabularies, different examples.
    pub fn with_examples(&self, examples: Vec<ExamplePair>) -> Dataset {
        Dataset {
            examples,
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
            cipher: self.cipher.clone(),
        }
    }

    /// Maps a transcript to its translation: reverse, then substitute.
    pub fn translate(&self, f: &[usize]) -> Vec<usize> {
        f.iter()
            .rev()
            .map(|&id| {
                let k = self.src_vocab.content_index(id).expect("content token");
                self.tgt_vocab.content_id(self.cipher[k])
            })
            .collect()
    }

    /// Inverse of [`Dataset::translate`].
    pub fn decipher_reverse(&self, e: &[usize]) -> Vec<usize> {
        let mut inverse = vec![0; self.cipher.len()];
        for (k, &c) in self.cipher.iter().enumerate() {
            inverse[c] = k;
        }
        e.iter()
            .rev()
            .map(|&id| {
                let c = self.tgt_vocab.content_index(id).expect("content token");
                self.src_vocab.content_id(inverse[c])
            })
            .collect()
    }
}

/// Generates the synthetic speech-translation corpus.
///
/// Each transcript is drawn uniformly; every token emits between the
/// configured number of frames, each a one-hot of the token plus Gaussian
/// noise. The translation is the reversed transcript under a fixed
/// substitution cipher, so speech/transcript alignment is monotonic while
/// speech/translation alignment is not.
pub fn generate(params: &GenerationParams) -> Result<Dataset> {
    params.validate()?;
    let v = params.vocab_size;
    let src_vocab = Vocabulary::synthetic("s", v);
    let tgt_vocab = Vocabulary::synthetic("t", v);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cipher: Vec<usize> = (0..v).collect();
    cipher.shuffle(&mut rng);
    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;

    let mut ds = Dataset {
        examples: Vec::with_capacity(params.n_examples),
        src_vocab,
        tgt_vocab,
        cipher,
    };
    for id in 0..params.n_examples {
        let j = rng.random_range(params.min_len..=params.max_len);
        let content: Vec<usize> = (0..j).map(|_| rng.random_range(0..v)).collect();
        let mut frames = Vec::new();
        let mut t = 0;
        for &k in &content {
            let r = rng.random_range(params.min_frames_per_token..=params.max_frames_per_token);
            for _ in 0..r {
                for d in 0..v {
                    let base = if d == k { 1.0 } else { 0.0 };
                    let n = if params.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    frames.push(base + n);
                }
                t += 1;
            }
        }
        let f_ids: Vec<usize> = content.iter().map(|&k| ds.src_vocab.content_id(k)).collect();
        let e_ids = ds.translate(&f_ids);
        let x = FeatureSequence::new(Tensor::matrix(t, v, frames)?)?;
        let f = TokenSequence::new(f_ids, Role::Transcript, &ds.src_vocab)?;
        let e = TokenSequence::new(e_ids, Role::Translation, &ds.tgt_vocab)?;
        ds.examples.push(ExamplePair { id, x, f, e });
    }
    Ok(ds)
}

/// Deterministic disjoint partition into train/dev/test by `fractions`.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must sum to 1")));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let parts = [&order[..n_train], &order[n_train..n_train + n_dev], &order[n_train + n_dev..]];
    for (frac, part) in fractions.iter().zip(&parts) {
        if *frac > 0.0 && part.is_empty() {
            return Err(Error::Empty(format!("split with fraction {frac} has no examples")));
        }
    }
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        dataset.with_examples(idx.into_iter().map(|i| dataset.examples[i].clone()).collect())
    };
    Ok((take(parts[0]), take(parts[1]), take(parts[2])))
}
