//! Mini-batch training loop with plateau learning-rate reduction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use super::{softmax_inplace, Model, PROB_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_reduction_factor: f64,
    /// Epochs without improvement before the learning rate is reduced.
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            epochs: 30,
            lr: 1e-3,
            lr_reduction_factor: 0.1,
            plateau_patience: 3,
            plateau_min_delta: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch and epochs must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.lr_reduction_factor > 0.0 && self.lr_reduction_factor <= 1.0) {
            return Err(Error::InvalidConfig("invalid learning-rate settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.train_loss).collect()
    }
}

/// Forward + backward on one batch; returns the summed loss and the number of
/// correct argmax predictions. Gradients are those of the *mean* batch loss
/// and are accumulated into the model.
pub fn batch_loss_and_grad<M: Model>(
    model: &mut M,
    inputs: &[&M::Input],
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let c = model.num_classes();
    let mut probs = model.forward_train(inputs, rng)?;
    let b = labels.len();
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &y) in probs.chunks_exact_mut(c).zip(labels) {
        if argmax(row) == y {
            correct += 1;
        }
        softmax_inplace(row);
        loss -= row[y].clamp(PROB_FLOOR, 1.0).ln();
        row[y] -= 1.0;
        for g in row.iter_mut() {
            *g /= b as f64;
        }
    }
    model.backward(&probs)?;
    Ok((loss, correct))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy (fraction) in inference mode.
pub fn evaluate<M: Model>(model: &M, inputs: &[M::Input], labels: &[usize]) -> Result<(f64, f64)> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let c = model.num_classes();
    let mut loss = 0.0;
    let mut correct = 0;
    for (chunk, ys) in inputs.chunks(256).zip(labels.chunks(256)) {
        let refs: Vec<&M::Input> = chunk.iter().collect();
        let mut logits = model.logits(&refs)?;
        for (row, &y) in logits.chunks_exact_mut(c).zip(ys) {
            if argmax(row) == y {
                correct += 1;
            }
            softmax_inplace(row);
            loss -= row[y].clamp(PROB_FLOOR, 1.0).ln();
        }
    }
    let n = inputs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} >= {classes} classes")));
    }
    Ok(())
}

/// Trains in place. The plateau rule watches the validation loss when a
/// validation set is given, the training loss otherwise.
pub fn train<M: Model>(
    model: &mut M,
    inputs: &[M::Input],
    labels: &[usize],
    val: Option<(&[M::Input], &[usize])>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    check_labels(labels, inputs.len(), classes)?;
    if let Some((vx, vy)) = val {
        check_labels(vy, vx.len(), classes)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut correct) = (0.0, 0);
        for idx in order.chunks(cfg.batch) {
            let xs: Vec<&M::Input> = idx.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            model.zero_grad();
            let (loss, hits) = batch_loss_and_grad(model, &xs, &ys, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss;
            correct += hits;
            adam.step(&mut model.params_mut(), lr);
        }
        let n = inputs.len() as f64;
        let (val_loss, val_accuracy) = match val {
            Some((vx, vy)) if !vx.is_empty() => {
                let (l, a) = evaluate(model, vx, vy)?;
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: total / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        });

        let watched = val_loss.unwrap_or(total / n);
        if !watched.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if watched < best - cfg.plateau_min_delta {
            best = watched;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr *= cfg.lr_reduction_factor;
                stale = 0;
            }
        }
    }
    Ok(TrainReport { history })
}
