use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer: `weights` is `[out, in]`, `bias` is `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [out, _] = *weights.shape() else {
            return Err(Error::InvalidShape(format!(
                "dense weights must be [out, in], got {:?}",
                weights.shape()
            )));
        };
        if bias.shape() != [out] {
            return Err(Error::InvalidShape(format!(
                "dense bias must be [{out}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct DenseCache<T = f32> {
    input: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Rows of the input: `[in]` is treated as a batch of one.
fn batch_rows<T: Scalar>(x: &Tensor<T>, features: usize) -> Result<usize> {
    match *x.shape() {
        [f] if f == features => Ok(1),
        [n, f] if f == features => Ok(n),
        _ => Err(Error::Shape(format!(
            "dense layer expects [{features}] or [N, {features}], got {:?}",
            x.shape()
        ))),
    }
}

/// `y = W·x + b` for a single vector or every row of a batch.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &DenseParams<T>,
) -> Result<(Tensor<T>, DenseCache<T>)> {
    let (fin, fout) = (params.in_features(), params.out_features());
    let n = batch_rows(x, fin)?;
    let mut out = Vec::with_capacity(n * fout);
    for _ in 0..n {
        out.extend_from_slice(params.bias.data());
    }
    // Y[N,out] += X[N,in] · Wᵀ
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x.data(),
        fin as isize,
        1,
        params.weights.data(),
        1,
        fin as isize,
        T::one(),
        &mut out,
    );
    let shape = if x.rank() == 1 { vec![fout] } else { vec![n, fout] };
    Ok((Tensor::new(shape, out)?, DenseCache { input: x.clone() }))
}

pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    params: &DenseParams<T>,
    grad_y: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (fin, fout) = (params.in_features(), params.out_features());
    let n = batch_rows(&cache.input, fin)?;
    if grad_y.len() != n * fout {
        return Err(Error::Shape(format!(
            "dense grad must have {n}×{fout} elements, got {:?}",
            grad_y.shape()
        )));
    }
    let g = grad_y.data();

    let mut grad_w = vec![T::zero(); fout * fin];
    // dW[out,in] = Gᵀ · X
    T::gemm(
        fout,
        n,
        fin,
        T::one(),
        g,
        1,
        fout as isize,
        cache.input.data(),
        fin as isize,
        1,
        T::zero(),
        &mut grad_w,
    );
    let mut grad_b = vec![T::zero(); fout];
    for row in g.chunks_exact(fout) {
        grad_b.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
    }
    let mut grad_x = vec![T::zero(); n * fin];
    // dX[N,in] = G · W
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        g,
        fout as isize,
        1,
        params.weights.data(),
        fin as isize,
        1,
        T::zero(),
        &mut grad_x,
    );
    Ok(DenseGrads {
        input: Tensor::new(cache.input.shape().to_vec(), grad_x)?,
        weights: Tensor::new(vec![fout, fin], grad_w)?,
        bias: Tensor::new(vec![fout], grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let p = DenseParams::new(Tensor::<f32>::identity(3).unwrap(), Tensor::zeros(&[3]).unwrap())
            .unwrap();
        let x = Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap();
        let (y, _) = dense_forward(&x, &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias_and_zero_weight_grad() {
        let p = DenseParams::new(
            Tensor::filled(&[2, 4], 0.3f32).unwrap(),
            Tensor::new(vec![2], vec![1.5f32, -0.5]).unwrap(),
        )
        .unwrap();
        let x = Tensor::zeros(&[4]).unwrap();
        let (y, cache) = dense_forward(&x, &p).unwrap();
        assert_eq!(y.data(), p.bias.data());
        let g = dense_backward(&cache, &p, &Tensor::filled(&[2], 1.0).unwrap()).unwrap();
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.bias.data(), &[1.0, 1.0]);
    }

    #[test]
    fn batch_matches_single_rows() {
        let p = DenseParams::new(
            Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap(),
            Tensor::new(vec![2], vec![0.1f32, 0.2]).unwrap(),
        )
        .unwrap();
        let xb = Tensor::new(vec![2, 3], vec![1.0f32, 0.0, 2.0, -1.0, 1.0, 1.0]).unwrap();
        let (yb, _) = dense_forward(&xb, &p).unwrap();
        for i in 0..2 {
            let xi = Tensor::new(vec![3], xb.outer_slice(i).to_vec()).unwrap();
            let (yi, _) = dense_forward(&xi, &p).unwrap();
            assert_eq!(yi.data(), yb.outer_slice(i));
        }
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let p = DenseParams::new(Tensor::<f32>::zeros(&[2, 3]).unwrap(), Tensor::zeros(&[2]).unwrap())
            .unwrap();
        let x = Tensor::zeros(&[4]).unwrap();
        assert!(matches!(dense_forward(&x, &p), Err(Error::Shape(_))));
    }
}
