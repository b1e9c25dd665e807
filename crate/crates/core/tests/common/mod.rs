//! Independent reference implementations shared by the integration tests.
//! Everything here is written for clarity, not speed, and uses none of the
//! library's numeric kernels.

#![allow(dead_code)]

use rand::Rng;

/// Same-padded stride-1 convolution by nested loops.
/// `x` is `[c][h][w]` flattened, `k` is `[o][c][ks][ks]`.
pub fn conv_naive(x: &[f64], c: usize, h: usize, w: usize, k: &[f64], b: &[f64], o: usize, ks: usize) -> Vec<f64> {
    let pad = (ks / 2) as isize;
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b[oc];
                for ic in 0..c {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += k[((oc * c + ic) * ks + ky) * ks + kx] * x[(ic * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(oc * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// `a` is `m×n`, `b` is `n×p`, both row-major.
pub fn matmul_naive(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..n {
                s += a[i * n + t] * b[t * p + j];
            }
            out[i * p + j] = s;
        }
    }
    out
}

/// Central difference of `f` with respect to every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, with a floor on the denominator so that two
/// near-zero values compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        d / 1e-7
    } else {
        d / scale
    }
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Mean silhouette coefficient of 2-D points under Euclidean distance.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for j in 0..points.len() {
            if i != j {
                sum[labels[j]] += dist(points[i], points[j]);
                count[labels[j]] += 1;
            }
        }
        let own = labels[i];
        let a = if count[own] > 0 { sum[own] / count[own] as f64 } else { 0.0 };
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += if count[own] == 0 { 0.0 } else { (b - a) / a.max(b) };
    }
    total / points.len() as f64
}

/// Confusion counts, `[label][prediction]`.
pub fn confusion_naive(preds: &[usize], labels: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

/// Row-wise argmax with ties resolved to the lowest index.
pub fn argmax_rows(scores: &[f64], k: usize) -> Vec<usize> {
    scores
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// One-vs-rest (FPR, TPR) at threshold `t`, counting `score >= t` as positive.
pub fn roc_point_naive(scores: &[f64], truth: &[bool], t: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut pos, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &y) in scores.iter().zip(truth) {
        if y {
            pos += 1.0;
            if s >= t {
                tp += 1.0;
            }
        } else {
            neg += 1.0;
            if s >= t {
                fp += 1.0;
            }
        }
    }
    (fp / neg, tp / pos)
}

/// Area under a polyline by the shoelace formula on the polygon closed
/// along the FPR axis. Points may come in any FPR direction.
pub fn shoelace_auc(points: &[(f64, f64)]) -> f64 {
    let mut poly: Vec<(f64, f64)> = points.to_vec();
    let last = *poly.last().unwrap();
    let first = poly[0];
    poly.push((last.0, 0.0));
    poly.push((first.0, 0.0));
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    (twice / 2.0).abs()
}

// ---------------------------------------------------------------------------
// Finite-difference suites. Each returns the largest relative error found.

use pyroclass::nn::{self, ConvParams, DenseParams};
use pyroclass::train::{categorical_cross_entropy, loss_and_logit_grad, one_hot, LossKind};
use pyroclass::{build_model, Model, ModelConfig, Task, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LAYER_H: f64 = 1e-3;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Values in `[lo, hi]` whose magnitude stays at least `gap` away from 0.
pub fn away_from_zero(rng: &mut impl Rng, n: usize, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Forward against the nested-loop oracle and all three gradients of
/// `Σ g ⊙ conv(x)` against central differences. Returns (forward abs err, grad rel err).
pub fn conv_check(seed: u64, c: usize, o: usize, side: usize, ks: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, c * side * side, -1.0, 1.0);
    let k = uniform(&mut rng, o * c * ks * ks, -1.0, 1.0);
    let b = uniform(&mut rng, o, -1.0, 1.0);
    let g = uniform(&mut rng, o * side * side, -1.0, 1.0);
    let params = |k: &[f64], b: &[f64]| ConvParams::new(t(&[o, c, ks, ks], k.to_vec()), t(&[o], b.to_vec())).unwrap();
    let input = t(&[c, side, side], x.clone());
    let (y, cache) = nn::conv2d_forward(&input, &params(&k, &b)).unwrap();
    let want = conv_naive(&x, c, side, side, &k, &b, o, ks);
    let fwd = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let grads = nn::conv2d_backward(&cache, &params(&k, &b), &t(&[o, side, side], g.clone())).unwrap();
    let loss = |x: &[f64], k: &[f64], b: &[f64]| dot(&g, &conv_naive(x, c, side, side, k, b, o, ks));
    let dx = central_diff(&x, LAYER_H, |p| loss(p, &k, &b));
    let dk = central_diff(&k, LAYER_H, |p| loss(&x, p, &b));
    let db = central_diff(&b, LAYER_H, |p| loss(&x, &k, p));
    let err = max_rel_err(grads.input.data(), &dx)
        .max(max_rel_err(grads.kernels.data(), &dk))
        .max(max_rel_err(grads.bias.data(), &db));
    (fwd, err)
}

pub fn relu_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&mut rng, 2 * 8 * 8, 0.05);
    let g = uniform(&mut rng, x.len(), -1.0, 1.0);
    let (_, cache) = nn::relu_forward(&t(&[2, 8, 8], x.clone()));
    let got = nn::relu_backward(&cache, &t(&[2, 8, 8], g.clone())).unwrap();
    let fd = central_diff(&x, LAYER_H, |p| dot(&g, &p.iter().map(|v| v.max(0.0)).collect::<Vec<_>>()));
    max_rel_err(got.data(), &fd)
}

/// Input values are a shuffled grid spaced 0.01 apart, so no window has a tie
/// within the probe step.
pub fn pool_check(seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..2 * 8 * 8).map(|i| i as f64 * 0.01 - 0.64).collect();
    x.shuffle(&mut rng);
    let g = uniform(&mut rng, 2 * 4 * 4, -1.0, 1.0);
    let (_, cache) = nn::maxpool2x2_forward(&t(&[2, 8, 8], x.clone())).unwrap();
    let got = nn::maxpool2x2_backward(&cache, &t(&[2, 4, 4], g.clone())).unwrap();
    let fd = central_diff(&x, LAYER_H, |p| {
        let (y, _) = nn::maxpool2x2_forward(&t(&[2, 8, 8], p.to_vec())).unwrap();
        dot(&g, y.data())
    });
    max_rel_err(got.data(), &fd)
}

/// Random 8→5 layer on a batch of 3.
pub fn dense_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, fin, fout) = (3, 8, 5);
    let x = uniform(&mut rng, n * fin, -1.0, 1.0);
    let w = uniform(&mut rng, fout * fin, -1.0, 1.0);
    let b = uniform(&mut rng, fout, -1.0, 1.0);
    let g = uniform(&mut rng, n * fout, -1.0, 1.0);
    let fwd = |x: &[f64], w: &[f64], b: &[f64]| {
        let mut wt = vec![0.0; fin * fout];
        for o in 0..fout {
            for i in 0..fin {
                wt[i * fout + o] = w[o * fin + i];
            }
        }
        let mut y = matmul_naive(x, &wt, n, fin, fout);
        for r in 0..n {
            for o in 0..fout {
                y[r * fout + o] += b[o];
            }
        }
        dot(&g, &y)
    };
    let params = DenseParams::new(t(&[fout, fin], w.clone()), t(&[fout], b.clone())).unwrap();
    let (_, cache) = nn::dense_forward(&t(&[n, fin], x.clone()), &params).unwrap();
    let got = nn::dense_backward(&cache, &params, &t(&[n, fout], g.clone())).unwrap();
    max_rel_err(got.input.data(), &central_diff(&x, LAYER_H, |p| fwd(p, &w, &b)))
        .max(max_rel_err(got.weights.data(), &central_diff(&w, LAYER_H, |p| fwd(&x, p, &b))))
        .max(max_rel_err(got.bias.data(), &central_diff(&b, LAYER_H, |p| fwd(&x, &w, p))))
}

/// Dropout with the mask held fixed by reseeding the generator per call.
pub fn dropout_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, 2 * 8 * 8, -1.0, 1.0);
    let g = uniform(&mut rng, x.len(), -1.0, 1.0);
    let run = |p: &[f64]| {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xD0);
        nn::dropout_forward(&t(&[2, 8, 8], p.to_vec()), 0.5, &mut r, true).unwrap()
    };
    let (_, cache) = run(&x);
    let got = nn::dropout_backward(&cache, &t(&[2, 8, 8], g.clone())).unwrap();
    let fd = central_diff(&x, LAYER_H, |p| dot(&g, run(p).0.data()));
    max_rel_err(got.data(), &fd)
}

/// Fused softmax + cross-entropy gradient with respect to the logits.
pub fn softmax_ce_check(seed: u64, kind: LossKind, k: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let z = uniform(&mut rng, n * k, -3.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let loss = |z: &[f64]| {
        let p = nn::softmax(&t(&[n, k], z.to_vec())).unwrap();
        loss_and_logit_grad(kind, &p, &labels).unwrap().0
    };
    let p = nn::softmax(&t(&[n, k], z.clone())).unwrap();
    let (_, got) = loss_and_logit_grad(kind, &p, &labels).unwrap();
    max_rel_err(got.data(), &central_diff(&z, LAYER_H, loss))
}

pub const MODEL_H: f64 = 1e-5;

/// Result of a whole-model probe.
pub struct ModelCheck {
    pub checked: usize,
    /// Probes whose one-sided slopes disagree: the step crosses a ReLU or
    /// max-pool kink (for example a pre-activation that is exactly 0). These
    /// are compared against the nearer one-sided slope instead.
    pub kinks: usize,
    pub worst: f64,
}

/// Backprop against central differences for parameters of a tiny model.
/// `stride` selects every `stride`-th parameter (1 = all of them).
pub fn model_check(config: &ModelConfig, seed: u64, stride: usize) -> ModelCheck {
    let model: Model<f64> = build_model(config, seed).unwrap().cast();
    let s = config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let labels = vec![0, config.num_classes - 1];
    let batch = t(&[2, 1, s, s], uniform(&mut rng, 2 * s * s, 0.0, 1.0));
    let onehot: Tensor<f64> = one_hot(&labels, config.num_classes).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let (probs, trace) = model.forward_traced(&batch, false, &mut r, None).unwrap();
    let (_, grad_logits) = loss_and_logit_grad(LossKind::Categorical, &probs, &labels).unwrap();
    let grads = model.backward(&trace, &grad_logits).unwrap();
    let analytic: Vec<f64> = grads.tensors().flat_map(|g| g.data().to_vec()).collect();

    let loss = |probe: &Model<f64>| categorical_cross_entropy(&probe.predict(&batch).unwrap(), &onehot).unwrap().0;
    let f0 = loss(&model);
    let mut probe = model.clone();
    let mut result = ModelCheck {
        checked: 0,
        kinks: 0,
        worst: 0.0,
    };
    let mut flat = 0usize;
    let lens: Vec<usize> = model.parameters().map(Tensor::len).collect();
    for (ti, &len) in lens.iter().enumerate() {
        for j in 0..len {
            if (flat + j) % stride != 0 {
                continue;
            }
            let orig = probe.parameters().nth(ti).unwrap().data()[j];
            probe.parameters_mut().nth(ti).unwrap().data_mut()[j] = orig + MODEL_H;
            let up = loss(&probe);
            probe.parameters_mut().nth(ti).unwrap().data_mut()[j] = orig - MODEL_H;
            let down = loss(&probe);
            probe.parameters_mut().nth(ti).unwrap().data_mut()[j] = orig;
            let right = (up - f0) / MODEL_H;
            let left = (f0 - down) / MODEL_H;
            let g = analytic[flat + j];
            let mut e = rel_err(g, (up - down) / (2.0 * MODEL_H));
            if e > 1e-3 && rel_err(right, left) > 1e-3 {
                // The probe straddles a kink: backprop must match one side.
                result.kinks += 1;
                e = rel_err(g, left).min(rel_err(g, right));
            }
            result.worst = result.worst.max(e);
            result.checked += 1;
        }
        flat += len;
    }
    result
}

/// Tiny depth-1 objects model with conv widths divided by 8.
pub fn narrow_tiny() -> ModelConfig {
    ModelConfig::tiny(1, Task::Objects).unwrap().with_width_divisor(8).unwrap()
}
