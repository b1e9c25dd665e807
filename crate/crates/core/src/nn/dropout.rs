use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-element multiplier applied in the forward pass; `None` at inference.
#[derive(Clone, Debug)]
pub struct DropoutCache<T = f32> {
    mask: Option<Vec<T>>,
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` during
/// training so the inference pass is the identity.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), DropoutCache { mask: None }));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((
        Tensor::new(x.shape().to_vec(), data)?,
        DropoutCache { mask: Some(mask) },
    ))
}

pub fn dropout_backward<T: Scalar>(cache: &DropoutCache<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    match &cache.mask {
        None => Ok(grad_y.clone()),
        Some(mask) if mask.len() == grad_y.len() => {
            let data = grad_y.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
            Tensor::new(grad_y.shape().to_vec(), data)
        }
        Some(mask) => Err(Error::Shape(format!(
            "dropout grad has {} elements, mask has {}",
            grad_y.len(),
            mask.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(vec![4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = dropout_forward(&x, 0.0, &mut rng, true).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn inference_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(vec![4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = dropout_forward(&x, 0.9, &mut rng, false).unwrap();
        assert_eq!(y, x);
        assert_eq!(dropout_backward(&cache, &x).unwrap(), x);
    }

    #[test]
    fn mean_is_preserved_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::<f32>::filled(&[100_000], 1.0).unwrap();
        let (y, cache) = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        let g = dropout_backward(&cache, &x).unwrap();
        assert_eq!(g, y);
    }

    #[test]
    fn rate_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f32>::zeros(&[2]).unwrap();
        for bad in [1.0, 1.5, -0.1] {
            assert!(matches!(
                dropout_forward(&x, bad, &mut rng, true),
                Err(Error::InvalidConfig(_))
            ));
        }
    }
}
