use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adadelta::{AdadeltaState, DEFAULT_EPSILON, DEFAULT_LR, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::eval::evaluate_prepared;
use crate::model::{Executor, ModelGraph, PreparedSample, Weights};
use crate::seed::derive_seed;
use crate::tensor::Scalar;

pub const DEFAULT_SEED: u64 = 20_200_724;
pub const DEFAULT_BATCH: usize = 128;

/// Samples per gradient work unit. The batch gradient is the in-order sum of
/// the unit gradients, independent of how many threads run them.
const CHUNK: usize = 8;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(Error::Config(format!(
                "unknown precision `{other}` (expected f32 or f64)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub master_seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            epochs: 100,
            lr: DEFAULT_LR,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
            master_seed: DEFAULT_SEED,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed for weight initialisation, derived from the master seed.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[INIT_STREAM])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch (dropout active).
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar = f32> {
    /// Snapshot with the highest validation accuracy; the earliest wins ties.
    pub best: Weights<T>,
    pub best_epoch: usize,
    pub last: Weights<T>,
    pub history: Vec<EpochMetrics>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn best_accuracy(&self) -> f64 {
        self.history[self.best_epoch - 1].val_accuracy
    }
}

struct Worker<T: Scalar> {
    exec: Executor<T>,
    grads: Weights<T>,
    loss: f64,
}

/// Mini-batch Adadelta on `train`, validating on `validation` after every
/// epoch. `progress` sees each epoch's metrics as they are produced.
pub fn train_with<T: Scalar>(
    graph: &ModelGraph,
    initial: Weights<T>,
    train: &[PreparedSample],
    validation: &[PreparedSample],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    initial.check(graph)?;

    let mut weights = initial;
    let mut state = AdadeltaState::new(&weights, config.rho, config.epsilon, config.lr)?;
    let units = config.batch_size.min(train.len()).div_ceil(CHUNK);
    let mut workers: Vec<Worker<T>> = (0..units)
        .map(|_| Worker {
            exec: Executor::new(graph),
            grads: weights.zeros_like(),
            loss: 0.0,
        })
        .collect();
    let mut grads = weights.zeros_like();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(Weights<T>, usize, f64)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.master_seed,
            &[SHUFFLE_STREAM, epoch as u64],
        )));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = T::lit(1.0 / batch.len() as f64);
            let w = &weights;
            workers.par_iter_mut().zip(batch.par_chunks(CHUNK)).try_for_each(
                |(worker, unit)| -> Result<()> {
                    worker.grads.fill_zero();
                    worker.loss = 0.0;
                    for &i in unit {
                        let s = &train[i];
                        let seed = derive_seed(config.master_seed, &[DROPOUT_STREAM, epoch as u64, s.id]);
                        worker.exec.forward(graph, w, &s.input, true, seed)?;
                        let loss =
                            worker
                                .exec
                                .backward(graph, w, usize::from(s.label), scale, &mut worker.grads)?;
                        worker.loss += loss.as_f64();
                    }
                    Ok(())
                },
            )?;
            let used = batch.len().div_ceil(CHUNK);
            grads.fill_zero();
            let mut batch_loss = 0.0;
            for worker in &workers[..used] {
                grads.add_assign(&worker.grads);
                batch_loss += worker.loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            epoch_loss += batch_loss;
            state.step(&mut weights, &grads)?;
        }

        let val = evaluate_prepared(graph, &weights, validation)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            train_loss: epoch_loss / train.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        progress(&m);
        if best.as_ref().is_none_or(|(_, _, acc)| m.val_accuracy > *acc) {
            best = Some((weights.clone(), m.epoch, m.val_accuracy));
        }
        history.push(m);
    }

    let (best, best_epoch, _) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: weights,
        history,
    })
}

pub fn train<T: Scalar>(
    graph: &ModelGraph,
    initial: Weights<T>,
    train: &[PreparedSample],
    validation: &[PreparedSample],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(graph, initial, train, validation, config, |_| {})
}
