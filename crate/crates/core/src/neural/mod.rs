//! Differentiable kernels and the two beam classifiers.
//!
//! Everything is double precision on the CPU. Each model caches what its
//! backward pass needs during [`Model::forward_train`]; [`Model::backward`]
//! consumes that cache and accumulates parameter gradients.

mod attention;
pub mod checkpoint;
mod layers;
mod lenet;
mod optim;
mod tensor;
mod train;
mod transformer;

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::entropy_unchecked;

pub use attention::{attention, ffn, multi_head, FfnParams, MultiHeadParams};
pub use lenet::{Activation, LeNet, LeNetConfig, LeNetInput};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Mat, Tensor};
pub use train::{batch_loss_and_grad, evaluate, train, EpochStats, TrainConfig, TrainReport};
pub use transformer::{sinusoidal_table, Sequence, Transformer, TransformerConfig};

/// Lower clamp applied to the label probability inside the log-loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub argmax: usize,
    /// Shannon entropy in nats.
    pub entropy: f64,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self::from_probs(softmax(logits))
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        let mut argmax = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[argmax] {
                argmax = i;
            }
        }
        let entropy = entropy_unchecked(&probs);
        Self { probs, argmax, entropy }
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_probs(vec![1.0 / n as f64; n])
    }

    /// Class ids by descending probability; equal probabilities keep index order.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub(crate) fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in row.iter_mut() {
        *z /= sum;
    }
}

/// `−ln p_label` with the probability clamped to `[PROB_FLOOR, 1]`.
pub fn cross_entropy(pred: &Prediction, label: usize) -> Result<f64> {
    let p = *pred
        .probs
        .get(label)
        .ok_or_else(|| Error::InvalidInput(format!("label {label} >= {} classes", pred.probs.len())))?;
    Ok(-p.clamp(PROB_FLOOR, 1.0).ln())
}

/// A classifier trained with softmax cross-entropy.
pub trait Model {
    type Input;
    type Config: Serialize + DeserializeOwned + Clone + PartialEq;

    /// Architecture tag written into checkpoints.
    const ARCH: &'static str;

    fn config(&self) -> &Self::Config;

    /// Zero-initialized model; used by the checkpoint loader.
    fn blank(config: &Self::Config) -> Result<Self>
    where
        Self: Sized;

    fn num_classes(&self) -> usize;

    /// Parameters in a fixed order (the checkpoint order).
    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Inference logits, `B × classes`, with dropout disabled.
    fn logits(&self, inputs: &[&Self::Input]) -> Result<Vec<f64>>;

    /// Training-mode forward pass; records the cache for [`Model::backward`].
    fn forward_train(&mut self, inputs: &[&Self::Input], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    /// Accumulates parameter gradients for `∂L/∂logits`.
    fn backward(&mut self, dlogits: &[f64]) -> Result<()>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn predict(&self, input: &Self::Input) -> Result<Prediction> {
        Ok(Prediction::from_logits(&self.logits(&[input])?))
    }

    fn predict_batch(&self, inputs: &[&Self::Input]) -> Result<Vec<Prediction>> {
        let c = self.num_classes();
        let logits = self.logits(inputs)?;
        Ok(logits.chunks_exact(c).map(Prediction::from_logits).collect())
    }
}
