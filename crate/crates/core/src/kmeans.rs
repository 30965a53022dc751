//! Seeded k-means with k-means++ initialisation and restarts.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KMeansError {
    #[error("k must be between 1 and the number of points ({points}), got {k}")]
    BadK { k: usize, points: usize },
    #[error("input contains non-finite values")]
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut t = rng.random::<f64>() * total;
            d2.iter()
                .position(|&d| {
                    t -= d;
                    t < 0.0
                })
                .unwrap_or(n - 1)
        };
        centroids.row_mut(j).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(j)));
        }
    }
    centroids
}

fn lloyd(x: ArrayView2<f64>, mut centroids: Array2<f64>, cfg: &KMeansConfig) -> KMeansResult {
    let (n, d) = x.dim();
    let mut labels = vec![0; n];
    for _ in 0..cfg.max_iter {
        for (i, r) in x.rows().into_iter().enumerate() {
            labels[i] = nearest(r, &centroids).0;
        }
        let mut sums = Array2::<f64>::zeros((cfg.k, d));
        let mut counts = vec![0usize; cfg.k];
        for (i, r) in x.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(labels[i]);
            s += &r;
            counts[labels[i]] += 1;
        }
        let mut shift = 0.0;
        for j in 0..cfg.k {
            // empty clusters keep their previous centroid
            if counts[j] > 0 {
                let new = sums.row(j).mapv(|v| v / counts[j] as f64);
                shift += sq_dist(new.view(), centroids.row(j));
                centroids.row_mut(j).assign(&new);
            }
        }
        if shift <= cfg.tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, r) in x.rows().into_iter().enumerate() {
        let (j, dist) = nearest(r, &centroids);
        labels[i] = j;
        inertia += dist;
    }
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// Runs `cfg.restarts` seeded k-means++ restarts and keeps the lowest inertia.
pub fn kmeans(x: ArrayView2<f64>, cfg: &KMeansConfig) -> Result<KMeansResult, KMeansError> {
    if cfg.k == 0 || cfg.k > x.nrows() {
        return Err(KMeansError::BadK { k: cfg.k, points: x.nrows() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KMeansError::NonFinite);
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[r as u64]));
        let res = lloyd(x, plus_plus(x, cfg.k, &mut rng), cfg);
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}
