//! Alternating GAN optimization, schedule, checkpoints and the ablation suite.

mod adam;
mod checkpoint;
mod config;
mod dataset;
mod run;
mod schedule;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{
    checkpoint_dir, latest_checkpoint, load_generator, load_trainer, read_meta,
    resolve_checkpoint, save_checkpoint, CheckpointMeta, META_FILE, PARAMS_FILE, SCHEMA,
};
pub use config::{AblationFlag, AugmentConfig, TrainConfig};
pub use dataset::{coverage, epoch_batches, make_batch, Batch, DomainPair, Item};
pub use run::{
    ablation_variants, resume_or_new, run_ablation_suite, train_loop, train_loop_with, EpochStats,
    LoopOptions,
    EPOCH_LOG, STEP_LOG,
};
pub use schedule::lr_schedule;
pub use trainer::{StepOutcome, Trainer};
