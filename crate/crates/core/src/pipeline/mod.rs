//! Optimizer, augmentation, stage runner, curriculum orchestration,
//! evaluation and checkpoints.

mod augment;
mod checkpoint;
mod eval;
mod optim;
mod train;

pub use augment::{apply_crop, crop_and_flip, draw_crop, CropDraw};
pub use checkpoint::{
    decode_checkpoint, digest, encode_checkpoint, load_checkpoint, save_checkpoint, write_atomic, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use eval::{evaluate, restore_image, tiled, TILE_OVERLAP};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use train::{
    evaluate_all, grid_from_tsv, grid_to_tsv, initial_checkpoint, load_plan_datasets, roster_index, run_stage,
    train_review_learning, train_step_loss, Flow, GridCell, LogRecord, NoObserver, Recorder, SamplePool,
    StageContext, TrainConfig, TrainObserver, TrainOrder, TrainOutcome, TrainState,
};
