//! Seeded mini-batch training loop with best-validation checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Gradients, OptimConfig, Optimizer, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Stop as soon as the validation metric reaches this value.
    #[serde(default)]
    pub stop_at: Option<f64>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, optim: OptimConfig, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            optim,
            seed,
            stop_at: None,
        }
    }

    pub fn stop_at(mut self, target: f64) -> Self {
        self.stop_at = Some(target);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optim.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Training records discarded before the loop (module-specific reason).
    pub dropped: usize,
}

impl History {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }
}

/// Trains `params` in place.
///
/// `example` must add the gradient of one example's loss into the buffer and
/// return the loss; `validate` scores the current parameters (higher is
/// better). The parameters left in place are those of the epoch with the
/// best validation score (earliest on ties).
pub fn fit<E>(
    params: &mut ParamSet,
    train: &[E],
    cfg: &TrainConfig,
    mut example: impl FnMut(&ParamSet, &E, &mut Gradients) -> Result<f64>,
    mut validate: impl FnMut(&ParamSet) -> Result<f64>,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optim.clone())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History {
        best_metric: f64::NEG_INFINITY,
        ..History::default()
    };
    let mut best = params.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(params);
            for &i in batch {
                total_loss += example(params, &train[i], &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Domain(format!("non-finite gradient in epoch {epoch}")));
            }
            optimizer.step(params, &grads)?;
        }
        if !params.is_finite() {
            return Err(Error::Domain(format!("non-finite parameters after epoch {epoch}")));
        }
        let metric = validate(params)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total_loss / train.len() as f64,
            val_metric: metric,
        });
        if metric > history.best_metric {
            history.best_metric = metric;
            history.best_epoch = epoch;
            best = params.clone();
        }
        if cfg.stop_at.is_some_and(|target| metric >= target) {
            break;
        }
    }
    *params = best;
    Ok(history)
}
