//! Small numeric helpers over `f64` slices.

use libm::{exp, log1p};

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = exp(*x - max);
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Rounds to the nearest `f32`. Parameters are kept on the `f32` grid so
/// checkpoints written as `f32` reload bit-identically.
pub fn to_f32_grid(x: f64) -> f64 {
    f64::from(x as f32)
}

/// `y = x · W` for row-major `W` of shape `x.len() × cols`.
pub fn vec_mat(x: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), x.len() * cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}
