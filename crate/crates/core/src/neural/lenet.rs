//! LeNet-5 style classifier over downscaled binary target masks.
//!
//! Activations are NHWC; convolutions are lowered to a single matrix
//! product through im2col.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{linear, linear_backward, relu_backward, relu_inplace, uniform_init};
use super::tensor::{gemm, Tensor};
use super::Model;
use crate::error::{Error, Result};
use crate::scene::BinaryImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeNetConfig {
    /// Side of the square input image.
    pub input: usize,
    pub kernel1: usize,
    pub filters1: usize,
    pub kernel2: usize,
    pub filters2: usize,
    pub fc1: usize,
    pub fc2: usize,
    pub classes: usize,
    /// Dense features concatenated to the flattened conv output (0 = plain LeNet).
    pub extra_features: usize,
    pub activation: Activation,
}

impl Default for LeNetConfig {
    fn default() -> Self {
        Self {
            input: 32,
            kernel1: 5,
            filters1: 6,
            kernel2: 5,
            filters2: 16,
            fc1: 120,
            fc2: 84,
            classes: 64,
            extra_features: 0,
            activation: Activation::Relu,
        }
    }
}

impl LeNetConfig {
    fn conv1_out(&self) -> usize {
        self.input + 1 - self.kernel1
    }

    fn pool1_out(&self) -> usize {
        self.conv1_out() / 2
    }

    fn conv2_out(&self) -> usize {
        self.pool1_out() + 1 - self.kernel2
    }

    fn pool2_out(&self) -> usize {
        self.conv2_out() / 2
    }

    /// Width of the flattened conv features (before extras).
    pub fn flat_features(&self) -> usize {
        self.pool2_out() * self.pool2_out() * self.filters2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input,
            self.kernel1,
            self.filters1,
            self.kernel2,
            self.filters2,
            self.fc1,
            self.fc2,
            self.classes,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig("LeNet sizes must be positive".into()));
        }
        if self.kernel1 > self.input || self.pool1_out() < self.kernel2 || self.pool2_out() == 0 {
            return Err(Error::InvalidConfig(format!(
                "LeNet input {} too small for kernels {}/{}",
                self.input, self.kernel1, self.kernel2
            )));
        }
        Ok(())
    }
}

/// One sample: a row-major `input × input` mask plus optional dense extras.
#[derive(Debug, Clone, PartialEq)]
pub struct LeNetInput {
    pub mask: Vec<f64>,
    pub extra: Vec<f64>,
}

impl LeNetInput {
    pub fn from_image(img: &BinaryImage) -> Self {
        Self {
            mask: img.to_f64(),
            extra: Vec::new(),
        }
    }

    pub fn with_extra(mut self, extra: Vec<f64>) -> Self {
        self.extra = extra;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeNet {
    config: LeNetConfig,
    conv1_w: Tensor,
    conv1_b: Tensor,
    conv2_w: Tensor,
    conv2_b: Tensor,
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
    fc3_w: Tensor,
    fc3_b: Tensor,
    cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
struct Cache {
    batch: usize,
    cols1: Vec<f64>,
    a1: Vec<f64>,
    cols2: Vec<f64>,
    a2: Vec<f64>,
    z0: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// im2col for a valid, stride-1 convolution over NHWC input `b × s × s × c`.
/// Each output row is ordered `(dy, dx, channel)`.
fn im2col(x: &[f64], b: usize, s: usize, c: usize, k: usize) -> Vec<f64> {
    let o = s + 1 - k;
    let width = k * k * c;
    let mut cols = vec![0.0; b * o * o * width];
    let mut row = 0;
    for n in 0..b {
        for y in 0..o {
            for xo in 0..o {
                let dst = &mut cols[row * width..(row + 1) * width];
                for dy in 0..k {
                    let src = ((n * s + y + dy) * s + xo) * c;
                    dst[dy * k * c..(dy + 1) * k * c].copy_from_slice(&x[src..src + k * c]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], b: usize, s: usize, c: usize, k: usize) -> Vec<f64> {
    let o = s + 1 - k;
    let width = k * k * c;
    let mut dx = vec![0.0; b * s * s * c];
    let mut row = 0;
    for n in 0..b {
        for y in 0..o {
            for xo in 0..o {
                let src = &dcols[row * width..(row + 1) * width];
                for dy in 0..k {
                    let dst = ((n * s + y + dy) * s + xo) * c;
                    for (d, v) in dx[dst..dst + k * c].iter_mut().zip(&src[dy * k * c..(dy + 1) * k * c]) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// 2×2 stride-2 average pooling; a trailing odd row/column is dropped.
fn avgpool(x: &[f64], b: usize, s: usize, c: usize) -> Vec<f64> {
    let o = s / 2;
    let mut out = vec![0.0; b * o * o * c];
    for n in 0..b {
        for y in 0..o {
            for xo in 0..o {
                let dst = ((n * o + y) * o + xo) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = ((n * s + 2 * y + dy) * s + 2 * xo + dx) * c;
                    for ch in 0..c {
                        out[dst + ch] += 0.25 * x[src + ch];
                    }
                }
            }
        }
    }
    out
}

fn avgpool_backward(dy: &[f64], b: usize, s: usize, c: usize) -> Vec<f64> {
    let o = s / 2;
    let mut dx = vec![0.0; b * s * s * c];
    for n in 0..b {
        for y in 0..o {
            for xo in 0..o {
                let src = ((n * o + y) * o + xo) * c;
                for (ddy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let dst = ((n * s + 2 * y + ddy) * s + 2 * xo + ddx) * c;
                    for ch in 0..c {
                        dx[dst + ch] = 0.25 * dy[src + ch];
                    }
                }
            }
        }
    }
    dx
}

impl LeNet {
    pub fn new(config: LeNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::blank(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = match config.activation {
            Activation::Relu => 6.0,
            Activation::Tanh => 3.0,
        };
        for (w, fan_in) in [
            (&mut net.conv1_w, config.kernel1 * config.kernel1),
            (&mut net.conv2_w, config.kernel2 * config.kernel2 * config.filters1),
            (&mut net.fc1_w, config.flat_features() + config.extra_features),
            (&mut net.fc2_w, config.fc1),
        ] {
            let n = w.len();
            w.data_mut()
                .copy_from_slice(&uniform_init(n, (gain / fan_in as f64).sqrt(), &mut rng));
        }
        // Glorot-style init for the classifier keeps initial logits small.
        let n = net.fc3_w.len();
        let bound = (6.0 / (config.fc2 + config.classes) as f64).sqrt();
        net.fc3_w.data_mut().copy_from_slice(&uniform_init(n, bound, &mut rng));
        Ok(net)
    }

    fn activate(&self, v: &mut [f64]) {
        match self.config.activation {
            Activation::Relu => relu_inplace(v),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    fn activate_backward(&self, grad: &mut [f64], activated: &[f64]) {
        match self.config.activation {
            Activation::Relu => relu_backward(grad, activated),
            Activation::Tanh => {
                for (g, a) in grad.iter_mut().zip(activated) {
                    *g *= 1.0 - a * a;
                }
            }
        }
    }

    fn check(&self, inputs: &[&LeNetInput]) -> Result<()> {
        let c = &self.config;
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for x in inputs {
            if x.mask.len() != c.input * c.input {
                return Err(Error::ShapeMismatch {
                    expected: vec![c.input, c.input],
                    got: vec![x.mask.len()],
                });
            }
            if x.extra.len() != c.extra_features {
                return Err(Error::ShapeMismatch {
                    expected: vec![c.extra_features],
                    got: vec![x.extra.len()],
                });
            }
        }
        Ok(())
    }

    fn forward(&self, inputs: &[&LeNetInput]) -> Result<(Vec<f64>, Cache)> {
        self.check(inputs)?;
        let c = &self.config;
        let b = inputs.len();
        let x: Vec<f64> = inputs.iter().flat_map(|i| i.mask.iter().copied()).collect();

        let (s1, s2) = (c.conv1_out(), c.conv2_out());
        let cols1 = im2col(&x, b, c.input, 1, c.kernel1);
        let mut a1 = linear(
            &cols1,
            b * s1 * s1,
            c.kernel1 * c.kernel1,
            self.conv1_w.data(),
            Some(self.conv1_b.data()),
            c.filters1,
        );
        self.activate(&mut a1);
        let p1 = avgpool(&a1, b, s1, c.filters1);

        let cols2 = im2col(&p1, b, c.pool1_out(), c.filters1, c.kernel2);
        let k2 = c.kernel2 * c.kernel2 * c.filters1;
        let mut a2 = linear(
            &cols2,
            b * s2 * s2,
            k2,
            self.conv2_w.data(),
            Some(self.conv2_b.data()),
            c.filters2,
        );
        self.activate(&mut a2);
        let p2 = avgpool(&a2, b, s2, c.filters2);

        let flat = c.flat_features();
        let width = flat + c.extra_features;
        let mut z0 = Vec::with_capacity(b * width);
        for (n, inp) in inputs.iter().enumerate() {
            z0.extend_from_slice(&p2[n * flat..(n + 1) * flat]);
            z0.extend_from_slice(&inp.extra);
        }
        let mut h1 = linear(&z0, b, width, self.fc1_w.data(), Some(self.fc1_b.data()), c.fc1);
        self.activate(&mut h1);
        let mut h2 = linear(&h1, b, c.fc1, self.fc2_w.data(), Some(self.fc2_b.data()), c.fc2);
        self.activate(&mut h2);
        let logits = linear(&h2, b, c.fc2, self.fc3_w.data(), Some(self.fc3_b.data()), c.classes);
        Ok((
            logits,
            Cache {
                batch: b,
                cols1,
                a1,
                cols2,
                a2,
                z0,
                h1,
                h2,
            },
        ))
    }
}

impl Model for LeNet {
    type Input = LeNetInput;
    type Config = LeNetConfig;
    const ARCH: &'static str = "lenet";

    fn config(&self) -> &LeNetConfig {
        &self.config
    }

    fn blank(config: &LeNetConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let p = |shape: &[usize]| Tensor::param(shape, vec![0.0; shape.iter().product()]);
        Ok(Self {
            config: config.clone(),
            conv1_w: p(&[c.kernel1, c.kernel1, 1, c.filters1])?,
            conv1_b: p(&[c.filters1])?,
            conv2_w: p(&[c.kernel2, c.kernel2, c.filters1, c.filters2])?,
            conv2_b: p(&[c.filters2])?,
            fc1_w: p(&[c.flat_features() + c.extra_features, c.fc1])?,
            fc1_b: p(&[c.fc1])?,
            fc2_w: p(&[c.fc1, c.fc2])?,
            fc2_b: p(&[c.fc2])?,
            fc3_w: p(&[c.fc2, c.classes])?,
            fc3_b: p(&[c.classes])?,
            cache: None,
        })
    }

    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.fc3_w,
            &self.fc3_b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.fc3_w,
            &mut self.fc3_b,
        ]
    }

    fn logits(&self, inputs: &[&LeNetInput]) -> Result<Vec<f64>> {
        Ok(self.forward(inputs)?.0)
    }

    fn forward_train(&mut self, inputs: &[&LeNetInput], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (logits, cache) = self.forward(inputs)?;
        self.cache = Some(cache);
        Ok(logits)
    }

    fn backward(&mut self, dlogits: &[f64]) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::NoForwardPass)?;
        let c = self.config.clone();
        let b = cache.batch;
        if dlogits.len() != b * c.classes {
            return Err(Error::DimensionMismatch {
                expected: b * c.classes,
                got: dlogits.len(),
            });
        }

        let (w, g) = self.fc3_w.value_and_grad();
        let mut dh2 = linear_backward(
            &cache.h2,
            b,
            c.fc2,
            w,
            dlogits,
            c.classes,
            g,
            Some(self.fc3_b.grad_mut()),
            true,
        )
        .expect("dx");
        self.activate_backward(&mut dh2, &cache.h2);

        let (w, g) = self.fc2_w.value_and_grad();
        let mut dh1 = linear_backward(
            &cache.h1,
            b,
            c.fc1,
            w,
            &dh2,
            c.fc2,
            g,
            Some(self.fc2_b.grad_mut()),
            true,
        )
        .expect("dx");
        self.activate_backward(&mut dh1, &cache.h1);

        let flat = c.flat_features();
        let width = flat + c.extra_features;
        let (w, g) = self.fc1_w.value_and_grad();
        let dz0 = linear_backward(
            &cache.z0,
            b,
            width,
            w,
            &dh1,
            c.fc1,
            g,
            Some(self.fc1_b.grad_mut()),
            true,
        )
        .expect("dx");
        let dp2: Vec<f64> = dz0
            .chunks_exact(width)
            .flat_map(|r| r[..flat].iter().copied())
            .collect();

        let s2 = c.conv2_out();
        let mut da2 = avgpool_backward(&dp2, b, s2, c.filters2);
        self.activate_backward(&mut da2, &cache.a2);
        let k2 = c.kernel2 * c.kernel2 * c.filters1;
        let (w, g) = self.conv2_w.value_and_grad();
        let dcols2 = linear_backward(
            &cache.cols2,
            b * s2 * s2,
            k2,
            w,
            &da2,
            c.filters2,
            g,
            Some(self.conv2_b.grad_mut()),
            true,
        )
        .expect("dx");
        let dp1 = col2im(&dcols2, b, c.pool1_out(), c.filters1, c.kernel2);

        let s1 = c.conv1_out();
        let mut da1 = avgpool_backward(&dp1, b, s1, c.filters1);
        self.activate_backward(&mut da1, &cache.a1);
        let k1 = c.kernel1 * c.kernel1;
        let g = self.conv1_w.grad_mut();
        gemm(
            true,
            false,
            k1,
            c.filters1,
            b * s1 * s1,
            1.0,
            &cache.cols1,
            &da1,
            1.0,
            g,
        );
        let gb = self.conv1_b.grad_mut();
        for row in da1.chunks_exact(c.filters1) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Prediction;
    use rand::Rng;

    fn random_input(cfg: &LeNetConfig, rng: &mut ChaCha8Rng) -> LeNetInput {
        LeNetInput {
            mask: (0..cfg.input * cfg.input)
                .map(|_| f64::from(rng.random_bool(0.3) as u8))
                .collect(),
            extra: (0..cfg.extra_features).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Straightforward nested-loop evaluation (NCHW-agnostic, per pixel).
    fn direct(net: &LeNet, x: &LeNetInput) -> Vec<f64> {
        let c = &net.config;
        let act = |v: f64| match c.activation {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        };
        let conv = |inp: &[f64], s: usize, cin: usize, k: usize, w: &[f64], bias: &[f64], cout: usize| {
            let o = s - k + 1;
            let mut out = vec![0.0; o * o * cout];
            for y in 0..o {
                for xo in 0..o {
                    for f in 0..cout {
                        let mut acc = bias[f];
                        for dy in 0..k {
                            for dx in 0..k {
                                for ch in 0..cin {
                                    acc += inp[((y + dy) * s + xo + dx) * cin + ch]
                                        * w[((dy * k + dx) * cin + ch) * cout + f];
                                }
                            }
                        }
                        out[(y * o + xo) * cout + f] = act(acc);
                    }
                }
            }
            out
        };
        let pool = |inp: &[f64], s: usize, ch: usize| {
            let o = s / 2;
            let mut out = vec![0.0; o * o * ch];
            for y in 0..o {
                for xo in 0..o {
                    for f in 0..ch {
                        let at = |yy: usize, xx: usize| inp[(yy * s + xx) * ch + f];
                        out[(y * o + xo) * ch + f] = (at(2 * y, 2 * xo)
                            + at(2 * y, 2 * xo + 1)
                            + at(2 * y + 1, 2 * xo)
                            + at(2 * y + 1, 2 * xo + 1))
                            / 4.0;
                    }
                }
            }
            out
        };
        let dense = |inp: &[f64], w: &[f64], bias: &[f64], relu: bool| {
            let out_n = bias.len();
            (0..out_n)
                .map(|j| {
                    let v = bias[j] + inp.iter().enumerate().map(|(i, x)| x * w[i * out_n + j]).sum::<f64>();
                    if relu {
                        act(v)
                    } else {
                        v
                    }
                })
                .collect::<Vec<f64>>()
        };
        let a1 = conv(
            &x.mask,
            c.input,
            1,
            c.kernel1,
            net.conv1_w.data(),
            net.conv1_b.data(),
            c.filters1,
        );
        let p1 = pool(&a1, c.conv1_out(), c.filters1);
        let a2 = conv(
            &p1,
            c.pool1_out(),
            c.filters1,
            c.kernel2,
            net.conv2_w.data(),
            net.conv2_b.data(),
            c.filters2,
        );
        let mut z = pool(&a2, c.conv2_out(), c.filters2);
        z.extend_from_slice(&x.extra);
        let h1 = dense(&z, net.fc1_w.data(), net.fc1_b.data(), true);
        let h2 = dense(&h1, net.fc2_w.data(), net.fc2_b.data(), true);
        dense(&h2, net.fc3_w.data(), net.fc3_b.data(), false)
    }

    fn randomize(net: &mut LeNet, rng: &mut ChaCha8Rng) {
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn default_parameter_count() {
        let net = LeNet::new(LeNetConfig::default(), 0).unwrap();
        assert_eq!(net.config.flat_features(), 400);
        // 156 + 2416 + 48120 + 10164 + 5440
        assert_eq!(net.param_count(), 66_296);
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for cfg in [
            LeNetConfig::default(),
            LeNetConfig {
                activation: Activation::Tanh,
                extra_features: 3,
                ..LeNetConfig::default()
            },
            LeNetConfig {
                input: 9,
                kernel1: 3,
                filters1: 2,
                kernel2: 2,
                filters2: 3,
                fc1: 5,
                fc2: 4,
                classes: 6,
                extra_features: 0,
                activation: Activation::Relu,
            },
        ] {
            let mut net = LeNet::new(cfg.clone(), 1).unwrap();
            randomize(&mut net, &mut rng);
            let xs: Vec<LeNetInput> = (0..3).map(|_| random_input(&cfg, &mut rng)).collect();
            let refs: Vec<&LeNetInput> = xs.iter().collect();
            let logits = net.logits(&refs).unwrap();
            for (n, x) in xs.iter().enumerate() {
                let want = direct(&net, x);
                for (a, b) in logits[n * cfg.classes..(n + 1) * cfg.classes].iter().zip(&want) {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_input_propagates_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = LeNetConfig::default();
        let mut net = LeNet::new(cfg.clone(), 3).unwrap();
        let zero = LeNetInput {
            mask: vec![0.0; 1024],
            extra: vec![],
        };
        for v in net
            .fc1_b
            .data_mut()
            .iter_mut()
            .chain(net.fc2_b.data_mut())
            .chain(net.fc3_b.data_mut())
        {
            *v = 0.0;
        }
        let p = net.predict(&zero).unwrap();
        assert!(p.probs.iter().all(|&q| (q - 1.0 / 64.0).abs() < 1e-15));

        // With random fc biases, the logits depend only on them.
        for v in net
            .fc1_b
            .data_mut()
            .iter_mut()
            .chain(net.fc2_b.data_mut())
            .chain(net.fc3_b.data_mut())
        {
            *v = rng.random_range(-1.0..1.0);
        }
        let before = net.logits(&[&zero]).unwrap();
        for v in net.conv1_w.data_mut().iter_mut().chain(net.conv2_w.data_mut()) {
            *v = rng.random_range(-1.0..1.0);
        }
        assert_eq!(net.logits(&[&zero]).unwrap(), before);
    }

    #[test]
    fn output_is_simplex_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = LeNet::new(LeNetConfig::default(), 5).unwrap();
        let x = random_input(&LeNetConfig::default(), &mut rng);
        let p: Prediction = net.predict(&x).unwrap();
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let bad = LeNetInput {
            mask: vec![0.0; 100],
            extra: vec![],
        };
        assert!(matches!(net.predict(&bad), Err(Error::ShapeMismatch { .. })));
        let mut net = net;
        assert!(matches!(net.backward(&[0.0; 64]), Err(Error::NoForwardPass)));
    }
}
