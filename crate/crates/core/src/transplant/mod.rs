//! Checkpoints, component grafting from pre-trained ASR and MT models, the
//! adapter layer, and fine-tuning of the resulting model.

mod checkpoint;
mod finetune;
mod scheme;

pub use checkpoint::{
    best_checkpoint_path, checkpoint_name, resolve_checkpoint, write_best_marker, Checkpoint, BEST_MARKER,
    FORMAT_VERSION, MAGIC,
};
pub use finetune::{
    derive_seed, epochs_to_accuracy, evaluate_dev, finetune, CheckpointSink, DevReport, Discard, FinetuneOutcome,
    RunDir, RunRow, TrainSchedule, METRICS_FILE,
};
pub use scheme::{apply_transplant, insert_adapter, Graft, SourceModel, TransplantReport, TransplantScheme};
