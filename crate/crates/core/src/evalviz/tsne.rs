use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Exact t-SNE settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

/// Points in 3-D with the KL divergence before and after optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Vec<[f64; 3]>,
    pub initial_kl: f64,
    pub kl: f64,
}

const MIN_PROB: f64 = 1e-12;

/// Exact 3-D t-SNE of `features`.
///
/// Points are processed in a canonical order (by feature bits) and each
/// starting position is drawn from an RNG keyed by the point's own features,
/// so permuting the input permutes the output identically.
pub fn tsne_embed(features: &[Vec<f32>], cfg: &TsneConfig) -> Result<Embedding> {
    let n = features.len();
    if n < 5 {
        return Err(Error::Validation(format!("t-SNE needs at least 5 points, got {n}")));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::Dimension("t-SNE features must share one nonzero length".into()));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < n as f64 / 3.0) {
        return Err(Error::Validation(format!(
            "perplexity {} must be positive and below n/3 = {:.3}",
            cfg.perplexity,
            n as f64 / 3.0
        )));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("t-SNE input contains non-finite values".into()));
    }

    let key = |f: &Vec<f32>| f.iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| key(&features[i]));
    let x: Vec<&[f32]> = order.iter().map(|&i| features[i].as_slice()).collect();

    let p = joint_probabilities(&x, cfg.perplexity);
    let mut y: Vec<[f64; 3]> = x.iter().map(|f| initial_point(f, cfg.seed)).collect();
    let initial_kl = kl_divergence(&p, &y);

    let mut update = vec![[0.0f64; 3]; n];
    let mut gains = vec![[1.0f64; 3]; n];
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let grad = gradient(&p, &y, exag);
        for i in 0..n {
            for k in 0..3 {
                let g = grad[i][k];
                gains[i][k] = if (g > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * g;
                y[i][k] += update[i][k];
            }
        }
        let mut mean = [0.0; 3];
        for pt in &y {
            (0..3).for_each(|k| mean[k] += pt[k] / n as f64);
        }
        for pt in &mut y {
            (0..3).for_each(|k| pt[k] -= mean[k]);
        }
    }
    let kl = kl_divergence(&p, &y);
    if !kl.is_finite() {
        return Err(Error::Numerical("t-SNE diverged".into()));
    }
    let mut points = vec![[0.0; 3]; n];
    for (pos, &i) in order.iter().enumerate() {
        points[i] = y[pos];
    }
    Ok(Embedding {
        points,
        initial_kl,
        kl,
    })
}

fn initial_point(f: &[f32], seed: u64) -> [f64; 3] {
    // FNV-1a over the seed and feature bits; stable across builds
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().into_iter().chain(f.iter().flat_map(|v| v.to_bits().to_le_bytes())) {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let dist = Normal::new(0.0, 1e-4).expect("finite std");
    [dist.sample(&mut rng), dist.sample(&mut rng), dist.sample(&mut rng)]
}

/// Symmetrised affinities `P` (row-major `n x n`), each row's Gaussian
/// bandwidth found by bisection to match the perplexity.
fn joint_probabilities(x: &[&[f32]], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let target = perplexity.ln();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d2: Vec<f64> = (0..n)
                .map(|j| {
                    x[i].iter()
                        .zip(x[j])
                        .map(|(&a, &b)| {
                            let t = a as f64 - b as f64;
                            t * t
                        })
                        .sum()
                })
                .collect();
            let dmin = (0..n).filter(|&j| j != i).map(|j| d2[j]).fold(f64::INFINITY, f64::min);
            let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
            let mut row = vec![0.0; n];
            for _ in 0..100 {
                let mut sum = 0.0;
                let mut dsum = 0.0;
                for j in 0..n {
                    row[j] = if j == i { 0.0 } else { (-(d2[j] - dmin) * beta).exp() };
                    sum += row[j];
                    dsum += (d2[j] - dmin) * row[j];
                }
                let entropy = sum.ln() + beta * dsum / sum;
                row.iter_mut().for_each(|v| *v /= sum);
                let diff = entropy - target;
                if diff.abs() < 1e-5 {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            row
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((rows[i][j] + rows[j][i]) / (2.0 * n as f64)).max(MIN_PROB);
            }
        }
    }
    p
}

fn student_t(y: &[[f64; 3]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let num: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            if i == j {
                0.0
            } else {
                let d: f64 = (0..3).map(|k| (y[i][k] - y[j][k]).powi(2)).sum();
                1.0 / (1.0 + d)
            }
        })
        .collect();
    let z = num.iter().sum();
    (num, z)
}

fn gradient(p: &[f64], y: &[[f64; 3]], exag: f64) -> Vec<[f64; 3]> {
    let n = y.len();
    let (num, z) = student_t(y);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 3];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[i * n + j] / z).max(MIN_PROB);
                let m = (exag * p[i * n + j] - q) * num[i * n + j];
                (0..3).for_each(|k| g[k] += 4.0 * m * (y[i][k] - y[j][k]));
            }
            g
        })
        .collect()
}

fn kl_divergence(p: &[f64], y: &[[f64; 3]]) -> f64 {
    let n = y.len();
    let (num, z) = student_t(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (num[i * n + j] / z).max(MIN_PROB);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl.max(0.0)
}

/// Share of points whose nearest class centroid (in the embedding) is their
/// own class.
pub fn nearest_centroid_purity(points: &[[f64; 3]], labels: &[usize]) -> f64 {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut centroids = vec![[0.0f64; 3]; classes];
    let mut counts = vec![0usize; classes];
    for (pt, &l) in points.iter().zip(labels) {
        (0..3).for_each(|k| centroids[l][k] += pt[k]);
        counts[l] += 1;
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let hits = points
        .iter()
        .zip(labels)
        .filter(|(pt, &l)| {
            let dist = |c: &[f64; 3]| (0..3).map(|k| (pt[k] - c[k]).powi(2)).sum::<f64>();
            let best = (0..classes)
                .filter(|&c| counts[c] > 0)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .expect("at least one class");
            best == l
        })
        .count();
    hits as f64 / points.len().max(1) as f64
}
