//! Lloyd's k-means with k-means++ seeding.
//!
//! Squared Euclidean distance, ties go to the lowest centroid index and an
//! empty cluster keeps its previous centroid. After the last iteration the
//! centroids are rounded to `f32` and points are reassigned once more, so the
//! stored assignments agree with the stored centroids.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::seed;

/// Iteration count used by index builds.
pub const DEFAULT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum()
}

fn nearest(x: &[f32], centroids: &[f64], dim: usize) -> u32 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best as u32
}

fn seed_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(row(first).iter().map(|&x| f64::from(x)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > r {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `r` past the final sum.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(n - 1))
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(row(pick).iter().map(|&x| f64::from(x)));
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = sq_dist(row(i), &centroids[start..start + dim]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Clusters the row-major `data` (`n × dim`) into `k` groups.
///
/// Panics if `k` is zero or larger than the number of rows.
pub fn kmeans(data: &[f32], dim: usize, k: usize, iterations: usize, seed: u64) -> KMeans {
    let n = data.len() / dim;
    assert!(k >= 1 && k <= n, "k must be in 1..=n");
    let mut rng = seed::rng(seed);
    let mut centroids = seed_plus_plus(data, dim, k, &mut rng);
    let mut assignments = vec![0u32; n];
    for _ in 0..iterations {
        for (i, x) in data.chunks_exact(dim).enumerate() {
            assignments[i] = nearest(x, &centroids, dim);
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.chunks_exact(dim).zip(&assignments) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x) {
                *s += f64::from(v);
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for t in 0..dim {
                centroids[j * dim + t] = sums[j * dim + t] * inv;
            }
        }
    }
    let centroids: Vec<f32> = centroids.iter().map(|&c| c as f32).collect();
    let widened: Vec<f64> = centroids.iter().map(|&c| f64::from(c)).collect();
    for (i, x) in data.chunks_exact(dim).enumerate() {
        assignments[i] = nearest(x, &widened, dim);
    }
    KMeans { centroids, assignments }
}
