use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AlignerModel;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::nn::{Adam, AdamConfig, ParamSet};

/// Aligner training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-3,
            batch_size: 8,
            rng_seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidInput(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One row of the loss trace. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Mean Chamfer loss over pairs (no gradients).
pub fn evaluate(model: &AlignerModel, pairs: &[(PointCloud, PointCloud)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to evaluate".into()));
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|(q, r)| model.forward(q, r).map(|a| a.chamfer))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Minibatch Adam on the Chamfer loss.
///
/// Per-pair gradients may be computed in parallel but are always reduced in
/// index order, so the trace is bit-reproducible for a given seed.
pub fn train(
    model: &mut AlignerModel,
    train_pairs: &[(PointCloud, PointCloud)],
    val_pairs: &[(PointCloud, PointCloud)],
    config: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut adam = Adam::new(config.adam(), model);
    let val = |m: &AlignerModel| -> Result<Option<f64>> {
        if val_pairs.is_empty() {
            Ok(None)
        } else {
            evaluate(m, val_pairs).map(Some)
        }
    };

    let mut trace = vec![EpochLoss {
        epoch: 0,
        train_loss: evaluate(model, train_pairs)?,
        val_loss: val(model)?,
    }];
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, AlignerModel)> = batch
                .par_iter()
                .map(|&i| model.loss_and_grads(&train_pairs[i].0, &train_pairs[i].1))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::TrainingFailed { epoch },
                    other => other,
                })?;
            let mut grads = model.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                loss_sum += loss;
                grads.add_scaled(g, scale);
            }
            adam.step(model, &grads);
            if !model.all_finite() {
                return Err(Error::TrainingFailed { epoch });
            }
        }
        let train_loss = loss_sum / train_pairs.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::TrainingFailed { epoch });
        }
        let val_loss = val(model).map_err(|_| Error::TrainingFailed { epoch })?;
        if matches!(val_loss, Some(v) if !v.is_finite()) {
            return Err(Error::TrainingFailed { epoch });
        }
        trace.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(trace)
}
