use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which inputs were positive in the forward pass.
#[derive(Clone, Debug)]
pub struct ReluCache {
    shape: Vec<usize>,
    active: Vec<bool>,
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        y,
        ReluCache {
            shape: x.shape().to_vec(),
            active,
        },
    )
}

pub fn relu_backward<T: Scalar>(cache: &ReluCache, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_y.len() != cache.active.len() {
        return Err(Error::Shape(format!(
            "relu grad has {} elements, forward saw {}",
            grad_y.len(),
            cache.active.len()
        )));
    }
    let data = grad_y
        .data()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor::new(cache.shape.clone(), data)
}

/// Numerically stable softmax of one logit vector.
pub fn softmax_slice<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Softmax over a `[K]` vector or over each row of an `[N, K]` matrix.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = match *logits.shape() {
        [k] | [_, k] => k,
        _ => {
            return Err(Error::Shape(format!(
                "softmax expects [K] or [N, K], got {:?}",
                logits.shape()
            )))
        }
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        out.extend(softmax_slice(row)?);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}
