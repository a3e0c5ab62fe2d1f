//! Loss, optimizer, learning-rate schedule, epoch loop, checkpoints and the
//! batch-size search.

mod batch_search;
mod checkpoint;
mod fit;
mod loss;
mod optim;
mod schedule;

pub use batch_search::{available_memory, find_max_batch_size, MemoryBudgetProbe, StepProbe};
pub use checkpoint::{load_checkpoint, manifest_path, read_manifest, save_checkpoint, CheckpointInfo, CheckpointManifest};
pub use fit::{
    fit, history_csv, read_history, validation_scores, BatchSize, EpochRecord, RunOutput, TrainConfig, TrainingRun,
    HISTORY_HEADER,
};
pub use loss::{bce_loss, combined_loss, combined_loss_grad, dice_loss, BCE_EPS, DEFAULT_DICE_SMOOTH};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::lr_at_epoch;
