#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sembeam::neural::{
    batch_loss_and_grad, softmax, LeNet, LeNetConfig, LeNetInput, Model, Sequence, Transformer, TransformerConfig,
};

pub const FD_STEP: f64 = 1e-5;
/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as denominator.
pub const REL_FLOOR: f64 = 1e-6;

fn mean_loss<M: Model>(model: &mut M, xs: &[&M::Input], ys: &[usize], seed: u64) -> f64 {
    let logits = model.forward_train(xs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let c = model.num_classes();
    let total: f64 = logits
        .chunks_exact(c)
        .zip(ys)
        .map(|(row, &y)| -softmax(row)[y].ln())
        .sum();
    total / ys.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Central differences over every parameter element. Dropout masks are
/// replayed by reseeding the forward pass identically each time.
pub fn grad_check<M: Model>(model: &mut M, xs: &[&M::Input], ys: &[usize], seed: u64) -> GradCheck {
    model.zero_grad();
    batch_loss_and_grad(model, xs, ys, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad().unwrap().to_vec()).collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].data()[i];
            model.params_mut()[pi].data_mut()[i] = orig + FD_STEP;
            let up = mean_loss(model, xs, ys, seed);
            model.params_mut()[pi].data_mut()[i] = orig - FD_STEP;
            let down = mean_loss(model, xs, ys, seed);
            model.params_mut()[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_err: worst,
        checked,
    }
}

pub fn reduced_lenet_config() -> LeNetConfig {
    LeNetConfig {
        input: 8,
        kernel1: 3,
        filters1: 2,
        kernel2: 2,
        filters2: 2,
        fc1: 6,
        fc2: 5,
        classes: 4,
        ..LeNetConfig::default()
    }
}

pub fn reduced_transformer_config() -> TransformerConfig {
    TransformerConfig {
        input: 3,
        d_model: 8,
        heads: 2,
        layers: 1,
        dim_ff: 16,
        dropout: 0.1,
        max_len: 32,
        classes: 5,
    }
}

pub fn lenet_grad_check(extra_features: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = LeNetConfig {
        extra_features,
        ..reduced_lenet_config()
    };
    let mut net = LeNet::new(cfg.clone(), 3).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let xs: Vec<LeNetInput> = (0..4)
        .map(|_| LeNetInput {
            mask: (0..64).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect(),
            extra: (0..extra_features).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let ys = [0, 3, 1, 2];
    let refs: Vec<&LeNetInput> = xs.iter().collect();
    grad_check(&mut net, &refs, &ys, 5)
}

pub fn transformer_grad_check() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut net = Transformer::new(reduced_transformer_config(), 4).unwrap();
    // move layer-norm gains/biases off their initial constants
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let xs: Vec<Sequence> = [1, 3, 5]
        .iter()
        .map(|&t| Sequence::new(3, (0..t * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let ys = [4, 0, 2];
    let refs: Vec<&Sequence> = xs.iter().collect();
    grad_check(&mut net, &refs, &ys, 9)
}
