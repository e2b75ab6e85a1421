use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, AdamW, AdamWConfig};
use super::{ModelParams, PreparedEdge, Workspace};
use crate::error::{Error, Result};
use crate::eval::geh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub clip_norm: f64,
    pub eval_every: u64,
    pub patience: u32,
    pub min_delta: f64,
    pub max_iters: u64,
    /// Edges per update; the loss is their mean.
    pub batch_size: usize,
    /// Share of the training edges held back for early stopping.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            optimizer: AdamWConfig::default(),
            clip_norm: 5.0,
            eval_every: 1000,
            patience: 20,
            min_delta: 0.1,
            max_iters: 200_000,
            batch_size: 1,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: u64,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    pub val_mgeh: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub evaluations: Vec<EvalPoint>,
    pub best_iteration: u64,
    pub best_mgeh: f64,
    pub iterations: u64,
    pub stopped_early: bool,
}

/// Shuffles `0..n` with `seed` and splits off a validation share.
///
/// At least one edge is held out whenever `n >= 2` and `fraction > 0`.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_7A11));
    let mut n_val = libm::round(n as f64 * fraction) as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn evaluate_mgeh(params: &ModelParams, edges: &[&PreparedEdge]) -> Result<f64> {
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for e in edges {
        let y = e.observed()?;
        total += geh(y, params.forward(e, &mut ws));
    }
    Ok(total / edges.len() as f64)
}

/// Stochastic edge-level training with early stopping on validation MGEH.
///
/// Edges are sampled uniformly with replacement. Returns the parameters of
/// the best evaluation together with the log.
pub fn train(
    init: ModelParams,
    train: &[&PreparedEdge],
    validation: &[&PreparedEdge],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training edges"));
    }
    init.validate()?;
    let targets: Vec<f64> = train.iter().map(|e| e.observed()).collect::<Result<_>>()?;
    for e in validation {
        e.observed()?;
    }
    if config.eval_every == 0 || config.batch_size == 0 {
        return Err(Error::Invalid("eval_every and batch_size must be positive".into()));
    }
    let val_set: &[&PreparedEdge] = if validation.is_empty() { train } else { validation };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut opt = AdamW::new(&params, config.optimizer);
    let mut grads = params.zero_grads();
    let mut ws = Workspace::default();
    let mut log = TrainLog { best_mgeh: f64::INFINITY, ..TrainLog::default() };
    let mut best = params.clone();
    let mut stale = 0u32;
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    let weight = 1.0 / config.batch_size as f64;

    let mut iteration = 0u64;
    while iteration < config.max_iters {
        iteration += 1;
        grads.zero();
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let i = rng.random_range(0..train.len());
            loss += weight * params.loss_and_grad(train[i], targets[i], weight, &mut ws, &mut grads);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step: iteration });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite { what: "gradient", step: iteration });
        }
        clip_global_norm(&mut grads, config.clip_norm);
        opt.update(&mut params, &grads);
        loss_sum += loss;
        loss_n += 1;

        let last = iteration == config.max_iters;
        if iteration % config.eval_every == 0 || (last && log.evaluations.is_empty()) {
            let mgeh = evaluate_mgeh(&params, val_set)?;
            log.evaluations.push(EvalPoint {
                iteration,
                train_loss: loss_sum / loss_n as f64,
                val_mgeh: mgeh,
            });
            loss_sum = 0.0;
            loss_n = 0;
            if log.evaluations.len() == 1 || mgeh < log.best_mgeh - config.min_delta {
                log.best_mgeh = mgeh;
                log.best_iteration = iteration;
                best = params.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    log.iterations = iteration;
    Ok((best, log))
}
