//! Mini-batch training and corpus-level evaluation for any
//! [`SequenceTagger`].
//!
//! Per-example gradients inside a batch are computed in parallel but summed
//! in example order, and every example draws its dropout masks from an RNG
//! seeded by `(seed, epoch, position)`, so runs are bit-for-bit repeatable
//! regardless of thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, ParamId};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::SequenceTagger;
use crate::optim::{Optimizer, OptimizerKind};
use crate::seqdata::{Example, Tag};
use crate::tensor::Tensor;

/// Adam step size used when none is given.
pub const DEFAULT_LEARNING_RATE: f64 = 8e-5;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Also score the training set after every epoch.
    pub eval_train: bool,
    /// Stop once training-set span F1 reaches this value (implies
    /// `eval_train`).
    pub stop_at_train_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            optimizer: OptimizerKind::adam(),
            clip_norm: None,
            eval_train: false,
            stop_at_train_f1: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-example loss over the epoch.
    pub mean_loss: f64,
    pub train_f1: Option<f64>,
    pub dev_f1: Option<f64>,
}

fn example_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    // splitmix-style mixing keeps neighbouring streams unrelated
    let mut z = seed ^ ((epoch as u64) << 32) ^ position as u64;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Loss and `(parameter, gradient)` pairs.
pub type ExampleGradients = (f64, Vec<(ParamId, Tensor)>);

/// Loss and parameter gradients of one example.
pub fn example_gradients<M: SequenceTagger + ?Sized>(
    model: &M,
    example: &Example,
    seed: u64,
) -> Result<ExampleGradients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let loss = model.loss(&mut g, example, &mut rng)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Domain {
            op: "training loss",
            detail: format!("loss is {value} on example {}", example.id),
        });
    }
    g.backward(loss)?;
    Ok((value, g.param_grads()))
}

/// Trains `model` in place. `on_epoch` sees each epoch's log as soon as it
/// is available.
pub fn train<M: SequenceTagger + ?Sized>(
    model: &mut M,
    train_set: &[Example],
    dev_set: Option<&[Example]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::Config(format!(
            "learning rate {} must be positive",
            config.learning_rate
        )));
    }
    if let Some(bad) = train_set.iter().find(|e| e.tags.len() != e.len() || e.is_empty()) {
        return Err(Error::Contract(format!(
            "training example {} is empty or not fully tagged",
            bad.id
        )));
    }
    let mut optimizer = Optimizer::for_store(config.optimizer, config.learning_rate, model.params())?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<ExampleGradients>> = {
                let m: &M = model;
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, &idx)| {
                        let seed = example_seed(config.seed, epoch, b * config.batch_size + i);
                        example_gradients(m, &train_set[idx], seed)
                    })
                    .collect()
            };
            let store = model.params_mut();
            store.zero_grad();
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                store.accumulate(grads)?;
            }
            store.scale_grads(1.0 / batch.len() as f64);
            if let Some(max) = config.clip_norm {
                let norm = store.grad_norm();
                if norm > max {
                    store.scale_grads(max / norm);
                }
            }
            optimizer.step_store(store)?;
        }
        let mean_loss = if train_set.is_empty() {
            0.0
        } else {
            total / train_set.len() as f64
        };
        let train_f1 = if config.eval_train || config.stop_at_train_f1.is_some() {
            Some(evaluate_model(model, train_set)?.overall.f1)
        } else {
            None
        };
        let dev_f1 = match dev_set {
            Some(d) => Some(evaluate_model(model, d)?.overall.f1),
            None => None,
        };
        let log = EpochLog {
            epoch,
            mean_loss,
            train_f1,
            dev_f1,
        };
        on_epoch(&log);
        logs.push(log);
        if let (Some(target), Some(f1)) = (config.stop_at_train_f1, train_f1) {
            if f1 >= target {
                break;
            }
        }
    }
    Ok(logs)
}

/// Predicts every example, in parallel, keeping corpus order.
pub fn predict_all<M: SequenceTagger + ?Sized>(model: &M, examples: &[Example]) -> Result<Vec<Vec<Tag>>> {
    examples.par_iter().map(|e| model.predict(e)).collect()
}

pub fn evaluate_model<M: SequenceTagger + ?Sized>(model: &M, examples: &[Example]) -> Result<EvalReport> {
    let pred = predict_all(model, examples)?;
    let gold: Vec<Vec<Tag>> = examples.iter().map(|e| e.tags.clone()).collect();
    evaluate(&gold, &pred)
}
