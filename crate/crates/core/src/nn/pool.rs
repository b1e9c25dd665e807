use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Argmax positions (flat input indices) of each pooling window.
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Non-overlapping 2×2 max pooling of a `[C, H, W]` tensor.
///
/// Ties resolve to the first element of the window in row-major order.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Shape(format!(
                "max-pool expects [C, H, W], got {:?}",
                x.shape()
            )))
        }
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max-pool needs even spatial extents, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward<T: Scalar>(cache: &PoolCache, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_y.len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "max-pool grad has {} elements, forward produced {}",
            grad_y.len(),
            cache.argmax.len()
        )));
    }
    let mut grad = vec![T::zero(); cache.input_shape.iter().product()];
    for (&idx, &g) in cache.argmax.iter().zip(grad_y.data()) {
        grad[idx] += g;
    }
    Tensor::new(cache.input_shape.clone(), grad)
}
