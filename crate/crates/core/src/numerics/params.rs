use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Initialization scheme for a freshly created parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, fan-in being the trailing extent.
    UniformFanIn,
    Zeros,
}

/// Draws a tensor of `shape` under `scheme` from `rng`.
pub fn seeded_init<R: Rng + ?Sized>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("cannot initialize shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::UniformFanIn => {
            let fan_in = *shape.last().unwrap() as f64;
            let bound = 1.0 / fan_in.sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

/// Deterministic per-name RNG derived from a store seed.
pub fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(name.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(bytes))
}

/// Named parameters of a model, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
    rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            entries: IndexMap::new(),
            rng_seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    /// Inserts a parameter; fails if the name already exists.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    /// Initializes `name` from the store seed unless it already exists.
    /// The draw depends only on the seed and the name.
    pub fn init_missing(&mut self, name: &str, shape: &[usize], scheme: InitScheme) -> Result<bool> {
        if self.entries.contains_key(name) {
            return Ok(false);
        }
        let mut rng = name_rng(self.rng_seed, name);
        let t = seeded_init(shape, scheme, &mut rng)?;
        self.entries.insert(name.to_string(), t);
        Ok(true)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn get_index(&self, idx: usize) -> (&str, &Tensor) {
        let (k, v) = self.entries.get_index(idx).expect("parameter index in range");
        (k.as_str(), v)
    }

    pub fn get_index_mut(&mut self, idx: usize) -> &mut Tensor {
        self.entries.get_index_mut(idx).expect("parameter index in range").1
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "`{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Names under a component prefix such as `"encoder."`.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.names().filter(move |n| n.starts_with(prefix))
    }
}
