//! Exact t-SNE of network output vectors.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::predict_samples;

/// Entropy tolerance (bits) of the per-point bandwidth search.
pub const ENTROPY_TOL: f64 = 1e-5;
pub const MAX_SEARCH_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0 && self.perplexity.is_finite()) {
            return Err(Error::InvalidConfig(format!("perplexity must be ≥ 2, got {}", self.perplexity)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("t-SNE needs at least one iteration".into()));
        }
        if !(self.learning_rate > 0.0 && self.exaggeration >= 1.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive and exaggeration ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Embedding {
    /// `[x, y]` per input point.
    pub points: Vec<[f64; 2]>,
    pub initial_kl: f64,
    pub kl: f64,
    /// The configuration actually used (perplexity possibly clamped).
    pub config: EmbedConfig,
}

/// Softmax scores `[N, K]` of every sample and their labels.
pub fn collect_outputs(model: &Model<f32>, samples: &Samples, batch_size: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
    Ok((predict_samples(model, samples, batch_size)?, samples.labels.clone()))
}

fn rows(points: &Tensor<f64>) -> Result<(usize, usize)> {
    match *points.shape() {
        [n, d] if n >= 2 && d >= 1 => Ok((n, d)),
        _ => Err(Error::Shape(format!("points must be [N ≥ 2, D ≥ 1], got {:?}", points.shape()))),
    }
}

fn sq_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for j in 0..n {
            row[j] = (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum();
        }
    });
    out
}

/// Conditional distribution `p_{j|i}` for precision `beta` over distances
/// `dist` (self excluded by the caller); returns `(probs, entropy_bits)`.
fn conditional(dist: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let w: Vec<f64> = dist.iter().map(|&d| (-beta * d).exp()).collect();
    let z: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|v| v / z).collect();
    let h_nats = z.ln() + beta * dist.iter().zip(&probs).map(|(d, p)| d * p).sum::<f64>();
    (probs, h_nats / std::f64::consts::LN_2)
}

/// Row-wise conditional affinities `p_{j|i}` (`N × N`, zero diagonal) with
/// each row's bandwidth set by bisection so its entropy is
/// `log2(perplexity)`.
pub fn conditional_affinities(points: &Tensor<f64>, perplexity: f64) -> Result<Vec<f64>> {
    let (n, d) = rows(points)?;
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(Error::InvalidConfig(format!(
            "perplexity must lie in (0, N = {n}), got {perplexity}"
        )));
    }
    let mut x = points.data().to_vec();
    let mut dist = sq_distances(&x, n, d);
    if (0..n).any(|i| (0..n).any(|j| i != j && dist[i * n + j] == 0.0)) {
        log::warn!("duplicate input points; adding 1e-12 jitter");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Normal::new(0.0, 1e-12).expect("valid std");
        x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        dist = sq_distances(&x, n, d);
    }
    let target = perplexity.log2();
    let mut p = vec![0.0; n * n];
    p.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
        // Shifting by the nearest distance leaves p_{j|i} unchanged and keeps exp() from underflowing.
        let nearest = others.iter().cloned().fold(f64::INFINITY, f64::min);
        others.iter_mut().for_each(|v| *v -= nearest);
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let (mut probs, mut h) = conditional(&others, beta);
        for _ in 0..MAX_SEARCH_STEPS {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (probs, h) = conditional(&others, beta);
        }
        let mut it = probs.into_iter();
        for (j, slot) in row.iter_mut().enumerate() {
            if j != i {
                *slot = it.next().expect("n − 1 probabilities");
            }
        }
    });
    Ok(p)
}

/// Symmetrized joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn joint_affinities(points: &Tensor<f64>, perplexity: f64) -> Result<Vec<f64>> {
    let (n, _) = rows(points)?;
    let cond = conditional_affinities(points, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Entropy in bits of each conditional row (diagonal skipped).
pub fn row_entropies(cond: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            -(0..n)
                .filter(|&j| j != i && cond[i * n + j] > 0.0)
                .map(|j| cond[i * n + j] * cond[i * n + j].log2())
                .sum::<f64>()
        })
        .collect()
}

/// `KL(P ‖ Q)` for the 2-D layout `y` (`[x0, y0, x1, y1, …]`) and its
/// gradient with the attractive term scaled by `exaggeration`.
pub fn kl_and_gradient(p: &[f64], y: &[f64], exaggeration: f64) -> (f64, Vec<f64>) {
    let n = y.len() / 2;
    let mut num = vec![0.0; n * n];
    num.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for j in 0..n {
            if i != j {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                row[j] = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    });
    let z: f64 = num.par_iter().sum();
    let grad: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                g[0] += 4.0 * w * (y[2 * i] - y[2 * j]);
                g[1] += 4.0 * w * (y[2 * i + 1] - y[2 * j + 1]);
            }
            g
        })
        .collect();
    let kl: f64 = (0..n * n)
        .filter(|&ij| ij / n != ij % n && p[ij] > 0.0)
        .map(|ij| p[ij] * (p[ij] / (num[ij] / z).max(1e-300)).ln())
        .sum();
    (kl, grad.into_iter().flatten().collect())
}

/// Perplexity actually used for `n` points: the requested value, lowered
/// to `(n − 1) / 3` when it is not below `n / 3`.
pub fn effective_perplexity(requested: f64, n: usize) -> f64 {
    if requested < n as f64 / 3.0 {
        requested
    } else {
        ((n as f64 - 1.0) / 3.0).max(f64::MIN_POSITIVE)
    }
}

/// Embed `[N, D]` points in 2-D.
pub fn tsne(points: &Tensor<f64>, config: &EmbedConfig) -> Result<Embedding> {
    config.validate()?;
    let (n, _) = rows(points)?;
    let mut used = config.clone();
    used.perplexity = effective_perplexity(config.perplexity, n);
    if used.perplexity != config.perplexity {
        log::warn!("perplexity {} too large for {n} points; using {:.4}", config.perplexity, used.perplexity);
    }
    let p = joint_affinities(points, used.perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let (initial_kl, _) = kl_and_gradient(&p, &y, 1.0);

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.momentum } else { config.final_momentum };
        let (_, grad) = kl_and_gradient(&p, &y, exaggeration);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::EmbeddingDiverged { iteration: it + 1 });
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= mean);
        }
    }
    let (kl, _) = kl_and_gradient(&p, &y, 1.0);
    if !kl.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::EmbeddingDiverged { iteration: config.iterations });
    }
    Ok(Embedding {
        points: y.chunks(2).map(|c| [c[0], c[1]]).collect(),
        initial_kl,
        kl,
        config: used,
    })
}

/// `x,y,label` rows at full precision.
pub fn embedding_csv(embedding: &Embedding, labels: &[String]) -> Result<String> {
    if labels.len() != embedding.points.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} points",
            labels.len(),
            embedding.points.len()
        )));
    }
    let mut out = String::from("x,y,label\n");
    for (p, l) in embedding.points.iter().zip(labels) {
        writeln!(out, "{},{},{l}", p[0], p[1]).expect("string write");
    }
    Ok(out)
}

#[derive(Serialize)]
struct EmbeddingMeta<'a> {
    n: usize,
    seed: u64,
    initial_kl: f64,
    kl: f64,
    input: &'a str,
    config: &'a EmbedConfig,
}

/// Write the CSV to `path` and metadata JSON next to it (`.json`).
pub fn export_embedding(embedding: &Embedding, labels: &[String], path: &Path) -> Result<()> {
    write_atomic(path, embedding_csv(embedding, labels)?.as_bytes())?;
    write_json(
        &path.with_extension("json"),
        &EmbeddingMeta {
            n: embedding.points.len(),
            seed: embedding.config.seed,
            initial_kl: embedding.initial_kl,
            kl: embedding.kl,
            input: "softmax scores",
            config: &embedding.config,
        },
    )
}
