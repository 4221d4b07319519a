//! Pre-norm transformer encoder over short per-target feature sequences.
//!
//! A batch of variable-length sequences is processed as one row-concatenated
//! matrix; attention is restricted to rows of the same sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{ffn_backward, ffn_forward, mha_backward, mha_forward, FfnCache, MhaCache};
use super::layers::{
    add_inplace, dropout_mask, layer_norm, layer_norm_backward, linear, linear_backward, mul_inplace, uniform_init,
    NormCache,
};
use super::tensor::{Mat, Tensor};
use super::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    /// Features per time step.
    pub input: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub dim_ff: usize,
    /// Applied to the attention and feed-forward branches; the input
    /// embedding is left intact so fine positional detail survives.
    pub dropout: f64,
    pub max_len: usize,
    pub classes: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            input: 3,
            d_model: 128,
            heads: 4,
            layers: 2,
            dim_ff: 512,
            dropout: 0.1,
            max_len: 5000,
            classes: 64,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.input,
            self.d_model,
            self.heads,
            self.dim_ff,
            self.max_len,
            self.classes,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidConfig("transformer sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `T` time steps of `width` features each, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    width: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::InvalidInput(format!(
                "sequence of {} values is not a multiple of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn from_steps(steps: &[[f64; 3]]) -> Self {
        Self {
            width: 3,
            data: steps.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }
}

fn pe(t: usize, i: usize, d: usize) -> f64 {
    let freq = 10000f64.powf((i - i % 2) as f64 / d as f64);
    let angle = t as f64 / freq;
    if i.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Sinusoidal position table, `len × d`.
pub fn sinusoidal_table(len: usize, d: usize) -> Mat {
    let data = (0..len).flat_map(|t| (0..d).map(move |i| pe(t, i, d))).collect();
    Mat::from_vec(len, d, data).expect("sized by construction")
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1_g: Tensor,
    ln1_b: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    ln2_g: Tensor,
    ln2_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl EncoderLayer {
    fn blank(d: usize, dff: usize) -> Result<Self> {
        let p = |shape: &[usize], v: f64| Tensor::param(shape, vec![v; shape.iter().product()]);
        Ok(Self {
            ln1_g: p(&[d], 1.0)?,
            ln1_b: p(&[d], 0.0)?,
            wq: p(&[d, d], 0.0)?,
            wk: p(&[d, d], 0.0)?,
            wv: p(&[d, d], 0.0)?,
            wo: p(&[d, d], 0.0)?,
            ln2_g: p(&[d], 1.0)?,
            ln2_b: p(&[d], 0.0)?,
            w1: p(&[d, dff], 0.0)?,
            b1: p(&[dff], 0.0)?,
            w2: p(&[dff, d], 0.0)?,
            b2: p(&[d], 0.0)?,
        })
    }

    fn params(&self) -> [&Tensor; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ln2_g,
            &self.ln2_b,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn params_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: NormCache,
    a: Vec<f64>,
    mha: MhaCache,
    drop1: Vec<f64>,
    ln2: NormCache,
    b: Vec<f64>,
    ffn: FfnCache,
    drop2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Cache {
    seqs: Vec<(usize, usize)>,
    input: Vec<f64>,
    layers: Vec<LayerCache>,
    final_ln: NormCache,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Transformer {
    config: TransformerConfig,
    emb_w: Tensor,
    emb_b: Tensor,
    layers: Vec<EncoderLayer>,
    final_g: Tensor,
    final_b: Tensor,
    head_w: Tensor,
    head_b: Tensor,
    cache: Option<Cache>,
}

impl Transformer {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        let mut net = Self::blank(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |t: &mut Tensor| {
            let (fan_in, fan_out) = (t.shape()[0], t.shape()[1]);
            let n = t.len();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.data_mut().copy_from_slice(&uniform_init(n, bound, &mut rng));
        };
        glorot(&mut net.emb_w);
        for l in &mut net.layers {
            for t in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                glorot(t);
            }
        }
        glorot(&mut net.head_w);
        Ok(net)
    }

    fn check(&self, inputs: &[&Sequence]) -> Result<Vec<(usize, usize)>> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let c = &self.config;
        let mut seqs = Vec::with_capacity(inputs.len());
        let mut start = 0;
        for s in inputs {
            if s.width != c.input {
                return Err(Error::ShapeMismatch {
                    expected: vec![s.len(), c.input],
                    got: vec![s.len(), s.width],
                });
            }
            if s.is_empty() || s.len() > c.max_len {
                return Err(Error::InvalidInput(format!(
                    "sequence length {} outside [1, {}]",
                    s.len(),
                    c.max_len
                )));
            }
            seqs.push((start, s.len()));
            start += s.len();
        }
        Ok(seqs)
    }

    fn forward(&self, inputs: &[&Sequence], mut rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, Cache)> {
        let seqs = self.check(inputs)?;
        let c = &self.config;
        let d = c.d_model;
        let input: Vec<f64> = inputs.iter().flat_map(|s| s.data.iter().copied()).collect();
        let rows = input.len() / c.input;
        let p = c.dropout;
        let mut mask = |n: usize| match rng.as_deref_mut() {
            Some(r) if p > 0.0 => dropout_mask(n, p, r),
            _ => Vec::new(),
        };

        let mut x = linear(&input, rows, c.input, self.emb_w.data(), Some(self.emb_b.data()), d);
        for &(s, n) in &seqs {
            for t in 0..n {
                for (i, v) in x[(s + t) * d..(s + t + 1) * d].iter_mut().enumerate() {
                    *v += pe(t, i, d);
                }
            }
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (a, ln1) = layer_norm(&x, d, l.ln1_g.data(), l.ln1_b.data());
            let (mut o, mha) = mha_forward(
                &a,
                &seqs,
                d,
                c.heads,
                [l.wq.data(), l.wk.data(), l.wv.data(), l.wo.data()],
            );
            let drop1 = mask(o.len());
            mul_inplace(&mut o, &drop1);
            let mut mid = x;
            add_inplace(&mut mid, &o);

            let (b, ln2) = layer_norm(&mid, d, l.ln2_g.data(), l.ln2_b.data());
            let (mut f, ffn) = ffn_forward(
                &b,
                rows,
                d,
                l.w1.data(),
                l.b1.data(),
                c.dim_ff,
                l.w2.data(),
                l.b2.data(),
            );
            let drop2 = mask(f.len());
            mul_inplace(&mut f, &drop2);
            let mut next = mid;
            add_inplace(&mut next, &f);
            caches.push(LayerCache {
                ln1,
                a,
                mha,
                drop1,
                ln2,
                b,
                ffn,
                drop2,
            });
            x = next;
        }

        let (y, final_ln) = layer_norm(&x, d, self.final_g.data(), self.final_b.data());
        let mut pooled = vec![0.0; seqs.len() * d];
        for (k, &(s, n)) in seqs.iter().enumerate() {
            let out = &mut pooled[k * d..(k + 1) * d];
            for t in 0..n {
                add_inplace(out, &y[(s + t) * d..(s + t + 1) * d]);
            }
            for v in out.iter_mut() {
                *v /= n as f64;
            }
        }
        let logits = linear(
            &pooled,
            seqs.len(),
            d,
            self.head_w.data(),
            Some(self.head_b.data()),
            c.classes,
        );
        Ok((
            logits,
            Cache {
                seqs,
                input,
                layers: caches,
                final_ln,
                pooled,
            },
        ))
    }
}

impl Model for Transformer {
    type Input = Sequence;
    type Config = TransformerConfig;
    const ARCH: &'static str = "transformer";

    fn config(&self) -> &TransformerConfig {
        &self.config
    }

    fn blank(config: &TransformerConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let p = |shape: &[usize], v: f64| Tensor::param(shape, vec![v; shape.iter().product()]);
        Ok(Self {
            config: config.clone(),
            emb_w: p(&[c.input, c.d_model], 0.0)?,
            emb_b: p(&[c.d_model], 0.0)?,
            layers: (0..c.layers)
                .map(|_| EncoderLayer::blank(c.d_model, c.dim_ff))
                .collect::<Result<_>>()?,
            final_g: p(&[c.d_model], 1.0)?,
            final_b: p(&[c.d_model], 0.0)?,
            head_w: p(&[c.d_model, c.classes], 0.0)?,
            head_b: p(&[c.classes], 0.0)?,
            cache: None,
        })
    }

    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.emb_w, &self.emb_b];
        for l in &self.layers {
            v.extend(l.params());
        }
        v.extend([&self.final_g, &self.final_b, &self.head_w, &self.head_b]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.emb_w, &mut self.emb_b];
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v.extend([&mut self.final_g, &mut self.final_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    fn logits(&self, inputs: &[&Sequence]) -> Result<Vec<f64>> {
        Ok(self.forward(inputs, None)?.0)
    }

    fn forward_train(&mut self, inputs: &[&Sequence], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (logits, cache) = self.forward(inputs, Some(rng))?;
        self.cache = Some(cache);
        Ok(logits)
    }

    fn backward(&mut self, dlogits: &[f64]) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::NoForwardPass)?;
        let c = self.config.clone();
        let d = c.d_model;
        let b = cache.seqs.len();
        if dlogits.len() != b * c.classes {
            return Err(Error::DimensionMismatch {
                expected: b * c.classes,
                got: dlogits.len(),
            });
        }
        let (w, g) = self.head_w.value_and_grad();
        let dpooled = linear_backward(
            &cache.pooled,
            b,
            d,
            w,
            dlogits,
            c.classes,
            g,
            Some(self.head_b.grad_mut()),
            true,
        )
        .expect("dx");

        let rows = cache.input.len() / c.input;
        let mut dy = vec![0.0; rows * d];
        for (k, &(s, n)) in cache.seqs.iter().enumerate() {
            for t in 0..n {
                for (o, v) in dy[(s + t) * d..(s + t + 1) * d]
                    .iter_mut()
                    .zip(&dpooled[k * d..(k + 1) * d])
                {
                    *o = v / n as f64;
                }
            }
        }
        let (g, gg) = self.final_g.value_and_grad();
        let mut dx = layer_norm_backward(&dy, d, &cache.final_ln, g, gg, self.final_b.grad_mut());

        for (l, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            // FFN branch: next = mid + drop2 ⊙ ffn(ln2(mid))
            let mut df = dx.clone();
            if !lc.drop2.is_empty() {
                mul_inplace(&mut df, &lc.drop2);
            }
            let (w1, gw1) = l.w1.value_and_grad();
            let (w2, gw2) = l.w2.value_and_grad();
            let db = ffn_backward(
                &df,
                &lc.b,
                d,
                &lc.ffn,
                w1,
                w2,
                [gw1, l.b1.grad_mut(), gw2, l.b2.grad_mut()],
            );
            let (g2, gg2) = l.ln2_g.value_and_grad();
            add_inplace(
                &mut dx,
                &layer_norm_backward(&db, d, &lc.ln2, g2, gg2, l.ln2_b.grad_mut()),
            );

            // attention branch: mid = x + drop1 ⊙ mha(ln1(x))
            let mut dout = dx.clone();
            if !lc.drop1.is_empty() {
                mul_inplace(&mut dout, &lc.drop1);
            }
            let (wq, gq) = l.wq.value_and_grad();
            let (wk, gk) = l.wk.value_and_grad();
            let (wv, gv) = l.wv.value_and_grad();
            let (wo, go) = l.wo.value_and_grad();
            let da = mha_backward(
                &dout,
                &lc.a,
                &lc.mha,
                &cache.seqs,
                d,
                c.heads,
                [wq, wk, wv, wo],
                [gq, gk, gv, go],
            );
            let (g1, gg1) = l.ln1_g.value_and_grad();
            add_inplace(
                &mut dx,
                &layer_norm_backward(&da, d, &lc.ln1, g1, gg1, l.ln1_b.grad_mut()),
            );
        }

        let (w, g) = self.emb_w.value_and_grad();
        linear_backward(
            &cache.input,
            rows,
            c.input,
            w,
            &dx,
            d,
            g,
            Some(self.emb_b.grad_mut()),
            false,
        );
        Ok(())
    }
}
