//! Row-major forward/backward kernels shared by both architectures.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::gemm;

pub(crate) const LN_EPS: f64 = 1e-5;

/// `Y = X·W + b`, X is `rows × inp`, W is `inp × out`.
pub(crate) fn linear(x: &[f64], rows: usize, inp: usize, w: &[f64], b: Option<&[f64]>, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(out) {
            row.copy_from_slice(b);
        }
        gemm(false, false, rows, out, inp, 1.0, x, w, 1.0, &mut y);
    } else {
        gemm(false, false, rows, out, inp, 1.0, x, w, 0.0, &mut y);
    }
    y
}

/// Accumulates `dW += Xᵀ·dY` and `db += Σ_rows dY`; returns `dX = dY·Wᵀ` when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    rows: usize,
    inp: usize,
    w: &[f64],
    dy: &[f64],
    out: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(true, false, inp, out, rows, 1.0, x, dy, 1.0, dw);
    if let Some(db) = db {
        for row in dy.chunks_exact(out) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * inp];
        gemm(false, true, rows, inp, out, 1.0, dy, w, 0.0, &mut dx);
        dx
    })
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the rectified output was not positive.
pub(crate) fn relu_backward(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, NormCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = gamma[c] * h + beta[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    cache: &NormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let g = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dgamma[c] += g[c] * xh[c];
            dbeta[c] += g[c];
            dxhat[c] = g[c] * gamma[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx[r * d + c] = is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1/(1−p)`.
pub(crate) fn dropout_mask(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub(crate) fn mul_inplace(v: &mut [f64], m: &[f64]) {
    for (x, s) in v.iter_mut().zip(m) {
        *x *= s;
    }
}

pub(crate) fn add_inplace(v: &mut [f64], other: &[f64]) {
    for (x, o) in v.iter_mut().zip(other) {
        *x += o;
    }
}

/// Uniform `[-bound, bound]` initializer.
pub(crate) fn uniform_init(n: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}
