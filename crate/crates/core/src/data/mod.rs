//! Synthetic speech-translation corpus: generation, filtering and padded
//! batching, splitting, and the on-disk format.

mod batch;
mod dataset;
mod io;
mod vocab;

pub use batch::{batch, filter, Batch, BatchOptions, Batches, CtcFilter, FilterReport};
pub use dataset::{
    generate, split, Dataset, ExamplePair, FeatureSequence, GenerationParams, Role, TokenSequence,
};
pub use io::{load_dataset, load_manifest, save_dataset, Manifest, EXAMPLES_FILE, MANIFEST_FILE};
pub use vocab::{Vocabulary, BOS, EOS, PAD};
