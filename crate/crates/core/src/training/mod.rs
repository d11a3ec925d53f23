//! Losses, batching and the training loop.

mod batches;
mod config;
mod losses;
mod trainer;

pub use batches::{bptt_batches, epoch_order, supervision_targets, Batch};
pub use config::{OptimizerKind, TrainConfig, TreeSource};
pub use losses::{
    joint_loss, joint_loss_var, lm_loss, ranking_accuracy, ranking_counts, ranking_loss, PairMode, RankPairs,
};
pub use trainer::{clip_global_norm, supervised_stream, train, EpochLog, Optimizer, TrainOutcome};
