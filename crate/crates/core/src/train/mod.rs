//! Three-step training: synthesis pretraining on paired data, classifier
//! pretraining of the mapping network on photos, then the full objective on
//! the target identities.

mod adam;
mod data;
mod pipeline;
mod trainer;

pub use adam::Adam;
pub use data::{Batch, PreparedSet};
pub use pipeline::{
    distractor_manifest, evaluate_protocol, finetune, load_step_set, pretrain, pretrain_key,
    run_steps, step_done, target_manifest, train_pipeline, PretrainCache,
};
pub use trainer::{trained_stores, EpochStats, IterationLoss, TrainState, LOSS_HEADER};
