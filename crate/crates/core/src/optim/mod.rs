//! Adadelta and the mini-batch training loop.

mod adadelta;
mod train;

pub use adadelta::{adadelta_step, AdadeltaState, DEFAULT_EPSILON, DEFAULT_LR, DEFAULT_RHO};
pub use train::{
    train, train_with, EpochMetrics, Precision, TrainConfig, TrainOutcome, DEFAULT_BATCH, DEFAULT_SEED,
};
