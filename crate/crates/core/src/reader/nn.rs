//! Dense building blocks for the reader: linear maps, layer norm, MLP and
//! multi-head attention over row-major `f64` matrices.

use alloc::vec;
use alloc::vec::Vec;

use libm::{sqrt, tanh};
use rand::Rng as _;

use crate::math::{softmax_in_place, to_f32_grid};
use crate::seed::Rng;

pub(crate) fn uniform(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| to_f32_grid(rng.random_range(-bound..bound))).collect()
}

/// `x (rows × inp) · w (inp × out)`, counting multiply-adds into `flops`.
pub(crate) fn matmul(x: &[f64], w: &[f64], rows: usize, inp: usize, out: usize, flops: &mut u64) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let yr = &mut y[r * out..(r + 1) * out];
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * out..(i + 1) * out];
            for (yo, &wv) in yr.iter_mut().zip(wr) {
                *yo += xi * wv;
            }
        }
    }
    *flops += (rows * inp * out) as u64;
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub(crate) fn new(d: usize) -> Self {
        Self { gain: vec![1.0; d], bias: vec![0.0; d] }
    }

    pub(crate) fn apply(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / sqrt(var + 1e-5);
            for i in 0..d {
                yr[i] = (xr[i] - mean) * inv * self.gain[i] + self.bias[i];
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl Mlp {
    pub(crate) fn init(rng: &mut Rng, d: usize, hidden: usize) -> Self {
        Self {
            w_in: uniform(rng, d * hidden, 1.0 / sqrt(d as f64)),
            b_in: vec![0.0; hidden],
            w_out: uniform(rng, hidden * d, 1.0 / sqrt(hidden as f64)),
            b_out: vec![0.0; d],
        }
    }

    pub(crate) fn apply(&self, x: &[f64], rows: usize, d: usize, flops: &mut u64) -> Vec<f64> {
        let hidden = self.b_in.len();
        let mut h = matmul(x, &self.w_in, rows, d, hidden, flops);
        for hr in h.chunks_exact_mut(hidden) {
            for (v, b) in hr.iter_mut().zip(&self.b_in) {
                *v = gelu(*v + b);
            }
        }
        let mut y = matmul(&h, &self.w_out, rows, hidden, d, flops);
        for yr in y.chunks_exact_mut(d) {
            for (v, b) in yr.iter_mut().zip(&self.b_out) {
                *v += b;
            }
        }
        y
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

/// Options for one attention call.
pub(crate) struct AttendOpts<'a> {
    pub heads: usize,
    pub causal: bool,
    /// Additive logit bias per key position.
    pub key_bias: Option<&'a [f64]>,
}

impl Attention {
    pub(crate) fn init(rng: &mut Rng, d: usize) -> Self {
        let b = 1.0 / sqrt(d as f64);
        Self { wq: uniform(rng, d * d, b), wk: uniform(rng, d * d, b), wv: uniform(rng, d * d, b), wo: uniform(rng, d * d, b) }
    }

    /// Attends `nq` query rows to `nk` key/value rows. Post-softmax
    /// probabilities are returned as `[head][query][key]`.
    pub(crate) fn apply(
        &self,
        queries: &[f64],
        keys: &[f64],
        nq: usize,
        nk: usize,
        d: usize,
        opts: &AttendOpts<'_>,
        flops: &mut u64,
    ) -> (Vec<f64>, Vec<f64>) {
        let q = matmul(queries, &self.wq, nq, d, d, flops);
        let k = matmul(keys, &self.wk, nk, d, d, flops);
        let v = matmul(keys, &self.wv, nk, d, d, flops);
        let dh = d / opts.heads;
        let scale = 1.0 / sqrt(dh as f64);
        let mut probs = vec![0.0; opts.heads * nq * nk];
        let mut mixed = vec![0.0; nq * d];
        let mut row = vec![0.0; nk];
        for h in 0..opts.heads {
            let off = h * dh;
            for i in 0..nq {
                let qi = &q[i * d + off..i * d + off + dh];
                let visible = if opts.causal { i + 1 } else { nk };
                for j in 0..visible {
                    let kj = &k[j * d + off..j * d + off + dh];
                    let mut s = 0.0;
                    for t in 0..dh {
                        s += qi[t] * kj[t];
                    }
                    s *= scale;
                    if let Some(bias) = opts.key_bias {
                        s += bias[j];
                    }
                    row[j] = s;
                }
                softmax_in_place(&mut row[..visible]);
                let out = &mut mixed[i * d + off..i * d + off + dh];
                for j in 0..visible {
                    let p = row[j];
                    probs[(h * nq + i) * nk + j] = p;
                    let vj = &v[j * d + off..j * d + off + dh];
                    for t in 0..dh {
                        out[t] += p * vj[t];
                    }
                }
                *flops += (2 * visible * dh) as u64;
            }
        }
        let out = matmul(&mixed, &self.wo, nq, d, d, flops);
        (out, probs)
    }
}
