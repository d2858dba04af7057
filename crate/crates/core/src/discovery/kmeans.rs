//! Lloyd's k-means with seeded k-means++ initialization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Centroid index per data point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Seeded k-means++ initialization (D^2 weighting).
fn init_plus_plus(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(data[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        };
        centroids.push(data[next].clone());
        let c = centroids.last().unwrap();
        for (i, x) in data.iter().enumerate() {
            let d = dist2(x, c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Run k-means. Assignment ties go to the lowest centroid index; clusters
/// that lose all members keep their previous centroid (callers drop empty
/// clusters when grouping). Deterministic for a fixed seed, independent of
/// thread count.
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<KMeansResult> {
    if data.is_empty() {
        return Err(Error::EmptyInput("kmeans data"));
    }
    if k == 0 || k > data.len() {
        return Err(Error::InvalidConfig(format!(
            "kmeans k must be in [1, {}], got {k}",
            data.len()
        )));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.iter().map(|x| x.len()).find(|&l| l != dim).unwrap_or(dim),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(data, k, &mut rng);
    let mut assignments: Vec<usize> = data.par_iter().map(|x| nearest(&centroids, x)).collect();
    let mut iterations = 0;

    for it in 1..=max_iterations {
        iterations = it;
        // Means, accumulated in point order.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignments) {
            counts[a] += 1;
            let row = &mut sums[a * dim..(a + 1) * dim];
            for (s, v) in row.iter_mut().zip(x) {
                *s += v;
            }
        }
        for (ci, c) in centroids.iter_mut().enumerate() {
            if counts[ci] == 0 {
                continue;
            }
            let row = &sums[ci * dim..(ci + 1) * dim];
            for (cj, &s) in c.iter_mut().zip(row) {
                *cj = s / counts[ci] as f64;
            }
        }

        let next: Vec<usize> = data.par_iter().map(|x| nearest(&centroids, x)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
    })
}
