use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Categorical,
    Binary,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(LossKind::Categorical),
            "binary" => Ok(LossKind::Binary),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss '{other}' (expected categorical or binary)"
            ))),
        }
    }
}

/// `[N, K]` one-hot rows for class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], k: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Label(format!("label {l} out of range for {k} classes")));
        }
        data[i * k + l] = T::one();
    }
    Tensor::new(vec![labels.len(), k], data)
}

fn rows<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, k] if n > 0 => Ok((n, k)),
        _ => Err(Error::Shape(format!("{what} must be a non-empty [N, K] matrix, got {:?}", t.shape()))),
    }
}

/// Mean categorical cross-entropy of softmax outputs against one-hot
/// targets, and its gradient with respect to the pre-softmax logits,
/// `(probs − onehot) / N`.
pub fn categorical_cross_entropy<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (n, k) = rows(probs, "probabilities")?;
    if onehot.shape() != probs.shape() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match probabilities {:?}",
            onehot.shape(),
            probs.shape()
        )));
    }
    let mut loss = 0.0;
    for i in 0..n {
        let p = &probs.data()[i * k..(i + 1) * k];
        let y = &onehot.data()[i * k..(i + 1) * k];
        let ones = y.iter().filter(|&&v| v == T::one()).count();
        let zeros = y.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::Label(format!("target row {i} is not one-hot")));
        }
        let total: f64 = p.iter().map(|v| v.as_f64()).sum();
        if !total.is_finite() || (total - 1.0).abs() > 1e-5 {
            return Err(Error::Numeric(format!("probability row {i} sums to {total}")));
        }
        let truth = y.iter().position(|&v| v == T::one()).expect("one-hot");
        loss -= p[truth].as_f64().max(EPS).ln();
    }
    let scale = T::of(1.0 / n as f64);
    let grad = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| (p - y) * scale)
        .collect();
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}

/// Mean binary cross-entropy of probabilities `p` against 0/1 targets and
/// its gradient with respect to `p`.
pub fn binary_cross_entropy<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if p.rank() != 1 || p.is_empty() || y.shape() != p.shape() {
        return Err(Error::Shape(format!(
            "expected matching non-empty [N] vectors, got {:?} and {:?}",
            p.shape(),
            y.shape()
        )));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (i, (&pi, &yi)) in p.data().iter().zip(y.data()).enumerate() {
        let yv = yi.as_f64();
        if yv != 0.0 && yv != 1.0 {
            return Err(Error::Label(format!("binary target {i} is {yv}, expected 0 or 1")));
        }
        let pv = pi.as_f64().clamp(EPS, 1.0 - EPS);
        loss -= yv * pv.ln() + (1.0 - yv) * (1.0 - pv).ln();
        grad.push(T::of((-yv / pv + (1.0 - yv) / (1.0 - pv)) / n));
    }
    Ok((loss / n, Tensor::new(p.shape().to_vec(), grad)?))
}

/// Loss of softmax scores `[N, K]` against class indices and its gradient
/// with respect to the logits.
///
/// The binary loss treats class 0 as the positive class and requires
/// `K == 2`; its gradient through the two-way softmax is chained
/// explicitly.
pub fn loss_and_logit_grad<T: Scalar>(kind: LossKind, probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, k) = rows(probs, "scores")?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} score rows but {} labels", labels.len())));
    }
    match kind {
        LossKind::Categorical => categorical_cross_entropy(probs, &one_hot(labels, k)?),
        LossKind::Binary => {
            if k != 2 {
                return Err(Error::InvalidConfig(format!("binary loss needs 2 classes, got {k}")));
            }
            let p0: Vec<T> = (0..n).map(|i| probs.data()[i * 2]).collect();
            let y: Vec<T> = labels
                .iter()
                .map(|&l| match l {
                    0 => Ok(T::one()),
                    1 => Ok(T::zero()),
                    _ => Err(Error::Label(format!("label {l} out of range for 2 classes"))),
                })
                .collect::<Result<_>>()?;
            let (loss, dp) = binary_cross_entropy(&Tensor::new(vec![n], p0.clone())?, &Tensor::new(vec![n], y)?)?;
            // p0 = σ(z0 − z1): dp0/dz0 = p0(1 − p0) = −dp0/dz1.
            let mut grad = Vec::with_capacity(2 * n);
            for (g, p) in dp.data().iter().zip(&p0) {
                let d = *g * *p * (T::one() - *p);
                grad.push(d);
                grad.push(-d);
            }
            Ok((loss, Tensor::new(vec![n, 2], grad)?))
        }
    }
}
