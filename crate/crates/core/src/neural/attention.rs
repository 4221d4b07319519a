//! Scaled dot-product attention, multi-head attention and the position-wise
//! feed-forward block.
//!
//! The public functions operate on a single [`Mat`]; the transformer calls the
//! slice kernels below directly on row-concatenated batches, where `seqs`
//! lists the `(first_row, len)` of every sequence.

use super::layers::{linear, linear_backward, relu_backward, relu_inplace};
use super::softmax_inplace;
use super::tensor::Mat;
use crate::error::{Error, Result};

fn shape_err(expected: &[usize], got: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

/// `softmax(Q·Kᵀ/√d_k)·V`, softmax taken row-wise.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat> {
    if q.cols != k.cols {
        return Err(shape_err(&[q.rows, q.cols], &[k.rows, k.cols]));
    }
    if k.rows != v.rows {
        return Err(shape_err(&[k.rows, v.cols], &[v.rows, v.cols]));
    }
    if k.rows == 0 {
        return Err(shape_err(&[1, k.cols], &[0, k.cols]));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut out = Mat::zeros(q.rows, v.cols);
    let mut w = vec![0.0; k.rows];
    for i in 0..q.rows {
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_inplace(&mut w);
        for (j, &wj) in w.iter().enumerate() {
            for c in 0..v.cols {
                out.data[i * v.cols + c] += wj * v.at(j, c);
            }
        }
    }
    Ok(out)
}

/// Projection weights for multi-head attention. Each of `wq`, `wk`, `wv` is
/// `d_model × d_model`; head `h` owns columns `h·d_k .. (h+1)·d_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadParams {
    pub heads: usize,
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

pub fn multi_head(params: &MultiHeadParams, x: &Mat) -> Result<Mat> {
    let d = x.cols;
    if params.heads == 0 || !d.is_multiple_of(params.heads) {
        return Err(Error::InvalidConfig(format!(
            "d_model {d} not divisible by {} heads",
            params.heads
        )));
    }
    for w in [&params.wq, &params.wk, &params.wv, &params.wo] {
        if w.rows != d || w.cols != d {
            return Err(shape_err(&[d, d], &[w.rows, w.cols]));
        }
    }
    let (out, _) = mha_forward(
        &x.data,
        &[(0, x.rows)],
        d,
        params.heads,
        [&params.wq.data, &params.wk.data, &params.wv.data, &params.wo.data],
    );
    Mat::from_vec(x.rows, d, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// `max(0, X·W₁ + b₁)·W₂ + b₂`.
pub fn ffn(params: &FfnParams, x: &Mat) -> Result<Mat> {
    let FfnParams { w1, b1, w2, b2 } = params;
    if w1.rows != x.cols {
        return Err(shape_err(&[x.cols, w1.cols], &[w1.rows, w1.cols]));
    }
    if b1.len() != w1.cols || w2.rows != w1.cols || b2.len() != w2.cols {
        return Err(shape_err(&[w1.cols, w2.cols], &[w2.rows, b2.len()]));
    }
    let (out, _) = ffn_forward(&x.data, x.rows, x.cols, &w1.data, b1, w1.cols, &w2.data, b2);
    Mat::from_vec(x.rows, w2.cols, out)
}

#[derive(Debug, Clone)]
pub(crate) struct MhaCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per sequence, per head: `len × len` attention weights.
    weights: Vec<f64>,
    concat: Vec<f64>,
}

/// Returns `Concat(heads)·W^O`; `w` is `[W^q, W^k, W^v, W^O]`.
pub(crate) fn mha_forward(
    x: &[f64],
    seqs: &[(usize, usize)],
    d: usize,
    heads: usize,
    w: [&[f64]; 4],
) -> (Vec<f64>, MhaCache) {
    let rows = x.len() / d;
    let q = linear(x, rows, d, w[0], None, d);
    let k = linear(x, rows, d, w[1], None, d);
    let v = linear(x, rows, d, w[2], None, d);
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = vec![0.0; rows * d];
    let mut weights = Vec::with_capacity(seqs.iter().map(|&(_, n)| n * n * heads).sum());
    for &(s, n) in seqs {
        for h in 0..heads {
            let off = h * dk;
            let base = weights.len();
            weights.resize(base + n * n, 0.0);
            let p = &mut weights[base..];
            for i in 0..n {
                let qi = &q[(s + i) * d + off..(s + i) * d + off + dk];
                let row = &mut p[i * n..(i + 1) * n];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[(s + j) * d + off..(s + j) * d + off + dk];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_inplace(row);
                let o = &mut concat[(s + i) * d + off..(s + i) * d + off + dk];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[(s + j) * d + off..(s + j) * d + off + dk];
                    for (oc, vc) in o.iter_mut().zip(vj) {
                        *oc += pij * vc;
                    }
                }
            }
        }
    }
    let out = linear(&concat, rows, d, w[3], None, d);
    (
        out,
        MhaCache {
            q,
            k,
            v,
            weights,
            concat,
        },
    )
}

/// Accumulates into `grads = [dW^q, dW^k, dW^v, dW^O]` and returns `∂L/∂x`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mha_backward(
    dout: &[f64],
    x: &[f64],
    cache: &MhaCache,
    seqs: &[(usize, usize)],
    d: usize,
    heads: usize,
    w: [&[f64]; 4],
    grads: [&mut [f64]; 4],
) -> Vec<f64> {
    let rows = x.len() / d;
    let [gq, gk, gv, go] = grads;
    let dconcat = linear_backward(&cache.concat, rows, d, w[3], dout, d, go, None, true).expect("dx requested");
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = vec![0.0; rows * d];
    let mut dkm = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut dp = Vec::new();
    let mut base = 0;
    for &(s, n) in seqs {
        for h in 0..heads {
            let off = h * dk;
            let p = &cache.weights[base..base + n * n];
            base += n * n;
            dp.clear();
            dp.resize(n, 0.0);
            for i in 0..n {
                let doi = &dconcat[(s + i) * d + off..(s + i) * d + off + dk];
                // dV += Pᵀ·dO, dP = dO·Vᵀ
                let mut dot = 0.0;
                for j in 0..n {
                    let pij = p[i * n + j];
                    let vj = &v[(s + j) * d + off..(s + j) * d + off + dk];
                    dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += pij * dp[j];
                    let dvj = &mut dv[(s + j) * d + off..(s + j) * d + off + dk];
                    for (g, o) in dvj.iter_mut().zip(doi) {
                        *g += pij * o;
                    }
                }
                for j in 0..n {
                    let ds = p[i * n + j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dk {
                        dq[(s + i) * d + off + c] += ds * k[(s + j) * d + off + c];
                        dkm[(s + j) * d + off + c] += ds * q[(s + i) * d + off + c];
                    }
                }
            }
        }
    }
    let mut dx = linear_backward(x, rows, d, w[0], &dq, d, gq, None, true).expect("dx requested");
    for (wi, g, dy) in [(w[1], gk, &dkm), (w[2], gv, &dv)] {
        let part = linear_backward(x, rows, d, wi, dy, d, g, None, true).expect("dx requested");
        for (a, b) in dx.iter_mut().zip(&part) {
            *a += b;
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub(crate) struct FfnCache {
    hidden: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn ffn_forward(
    x: &[f64],
    rows: usize,
    d: usize,
    w1: &[f64],
    b1: &[f64],
    dff: usize,
    w2: &[f64],
    b2: &[f64],
) -> (Vec<f64>, FfnCache) {
    let mut hidden = linear(x, rows, d, w1, Some(b1), dff);
    relu_inplace(&mut hidden);
    let out = linear(&hidden, rows, dff, w2, Some(b2), b2.len());
    (out, FfnCache { hidden })
}

/// Accumulates into `grads = [dW₁, db₁, dW₂, db₂]` and returns `∂L/∂x`.
pub(crate) fn ffn_backward(
    dout: &[f64],
    x: &[f64],
    d: usize,
    cache: &FfnCache,
    w1: &[f64],
    w2: &[f64],
    grads: [&mut [f64]; 4],
) -> Vec<f64> {
    let rows = x.len() / d;
    let dff = w1.len() / d;
    let out = w2.len() / dff;
    let [gw1, gb1, gw2, gb2] = grads;
    let mut dh = linear_backward(&cache.hidden, rows, dff, w2, dout, out, gw2, Some(gb2), true).expect("dx requested");
    relu_backward(&mut dh, &cache.hidden);
    linear_backward(x, rows, d, w1, &dh, dff, gw1, Some(gb1), true).expect("dx requested")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn close(a: &Mat, b: &Mat, tol: f64) -> bool {
        a.rows == b.rows && a.cols == b.cols && a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < tol)
    }

    /// Explicit per-row softmax-weighted sum.
    fn attention_oracle(q: &Mat, k: &Mat, v: &Mat) -> Mat {
        let mut out = Mat::zeros(q.rows, v.cols);
        for i in 0..q.rows {
            let scores: Vec<f64> = (0..k.rows)
                .map(|j| (0..q.cols).map(|c| q.at(i, c) * k.at(j, c)).sum::<f64>() / (q.cols as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let w = s.exp() / z;
                for c in 0..v.cols {
                    out.data[i * v.cols + c] += w * v.at(j, c);
                }
            }
        }
        out
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = rand_mat(3, 4, &mut rng);
        let k = Mat::from_vec(5, 4, [0.3, -0.2, 0.5, 1.0].repeat(5)).unwrap();
        let v = rand_mat(5, 2, &mut rng);
        let out = attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                let mean = (0..5).map(|j| v.at(j, c)).sum::<f64>() / 5.0;
                assert!((out.at(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_returns_value() {
        let q = Mat::from_vec(1, 2, vec![4.0, -7.0]).unwrap();
        let k = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let v = Mat::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn attention_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (
            rand_mat(3, 4, &mut rng),
            rand_mat(3, 4, &mut rng),
            rand_mat(3, 4, &mut rng),
        );
        assert!(close(
            &attention(&q, &k, &v).unwrap(),
            &attention_oracle(&q, &k, &v),
            1e-12
        ));
        assert!(attention(&q, &rand_mat(3, 5, &mut rng), &v).is_err());
        assert!(attention(&q, &k, &rand_mat(2, 4, &mut rng)).is_err());
    }

    fn random_mha(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> MultiHeadParams {
        MultiHeadParams {
            heads,
            wq: rand_mat(d, d, rng),
            wk: rand_mat(d, d, rng),
            wv: rand_mat(d, d, rng),
            wo: rand_mat(d, d, rng),
        }
    }

    fn cols(m: &Mat, lo: usize, hi: usize) -> Mat {
        let data = (0..m.rows).flat_map(|r| m.row(r)[lo..hi].to_vec()).collect();
        Mat::from_vec(m.rows, hi - lo, data).unwrap()
    }

    #[test]
    fn one_head_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_mha(6, 1, &mut rng);
        let x = rand_mat(4, 6, &mut rng);
        let (q, k, v) = (
            x.matmul(&p.wq).unwrap(),
            x.matmul(&p.wk).unwrap(),
            x.matmul(&p.wv).unwrap(),
        );
        let expect = attention(&q, &k, &v).unwrap().matmul(&p.wo).unwrap();
        assert!(close(&multi_head(&p, &x).unwrap(), &expect, 1e-12));
    }

    #[test]
    fn identical_rows_stay_identical() {
        let d = 4;
        let p = MultiHeadParams {
            heads: 2,
            wq: Mat::identity(d),
            wk: Mat::identity(d),
            wv: Mat::identity(d),
            wo: Mat::identity(d),
        };
        let x = Mat::from_vec(3, d, [0.2, -1.0, 0.7, 0.0].repeat(3)).unwrap();
        let out = multi_head(&p, &x).unwrap();
        for r in 1..3 {
            assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn multi_head_matches_head_by_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (d, heads) = (8, 4);
        let p = random_mha(d, heads, &mut rng);
        let x = rand_mat(5, d, &mut rng);
        let dk = d / heads;
        let mut concat = Mat::zeros(5, d);
        for h in 0..heads {
            let q = x.matmul(&cols(&p.wq, h * dk, (h + 1) * dk)).unwrap();
            let k = x.matmul(&cols(&p.wk, h * dk, (h + 1) * dk)).unwrap();
            let v = x.matmul(&cols(&p.wv, h * dk, (h + 1) * dk)).unwrap();
            let o = attention_oracle(&q, &k, &v);
            for r in 0..5 {
                for c in 0..dk {
                    concat.data[r * d + h * dk + c] = o.at(r, c);
                }
            }
        }
        let expect = concat.matmul(&p.wo).unwrap();
        assert!(close(&multi_head(&p, &x).unwrap(), &expect, 1e-12));

        let bad = random_mha(6, 4, &mut rng);
        assert!(multi_head(&bad, &rand_mat(2, 6, &mut rng)).is_err());
    }

    #[test]
    fn ffn_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(3, 4, &mut rng);
        let dead = FfnParams {
            w1: Mat::zeros(4, 6),
            b1: vec![-0.5, 0.0, -1.0, -2.0, 0.0, -0.1],
            w2: rand_mat(6, 2, &mut rng),
            b2: vec![0.7, -0.3],
        };
        let out = ffn(&dead, &x).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &[0.7, -0.3]);
        }

        let nonneg = Mat::from_vec(3, 4, x.data.iter().map(|v| v.abs()).collect()).unwrap();
        let ident = FfnParams {
            w1: Mat::identity(4),
            b1: vec![0.0; 4],
            w2: Mat::identity(4),
            b2: vec![0.0; 4],
        };
        assert_eq!(ffn(&ident, &nonneg).unwrap(), nonneg);

        let p = FfnParams {
            w1: rand_mat(4, 5, &mut rng),
            b1: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            w2: rand_mat(5, 3, &mut rng),
            b2: vec![0.1, 0.2, 0.3],
        };
        let mut h = x.matmul(&p.w1).unwrap();
        for r in 0..3 {
            for c in 0..5 {
                h.data[r * 5 + c] = (h.data[r * 5 + c] + p.b1[c]).max(0.0);
            }
        }
        let mut expect = h.matmul(&p.w2).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                expect.data[r * 3 + c] += p.b2[c];
            }
        }
        assert!(close(&ffn(&p, &x).unwrap(), &expect, 1e-12));
        assert!(ffn(&p, &rand_mat(3, 5, &mut rng)).is_err());
    }
}
