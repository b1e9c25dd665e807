//! Same-padded, stride-1 2-D convolution via im2col + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Kernels `[out, in, k, k]` with `k ∈ {1, 3}` and one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernels: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = kernels.shape();
        if s.len() != 4 || s[2] != s[3] || !(s[2] == 1 || s[2] == 3) {
            return Err(Error::InvalidShape(format!(
                "conv kernels must be [out, in, 3, 3] or [out, in, 1, 1], got {s:?}"
            )));
        }
        if bias.shape() != [s[0]] {
            return Err(Error::InvalidShape(format!(
                "conv bias must be [{}], got {:?}",
                s[0],
                bias.shape()
            )));
        }
        Ok(Self { kernels, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    fn patch_len(&self) -> usize {
        self.in_channels() * self.kernel_size() * self.kernel_size()
    }
}

/// Forward input retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T = f32> {
    input: Tensor<T>,
}

impl<T: Scalar> ConvCache<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn chw<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!(
            "expected a [C, H, W] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Unfold 3×3 neighbourhoods (zero padded by one) into a `[C·9, H·W]` matrix.
fn im2col3<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`]: scatter-add columns back onto the image.
fn col2im3<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

/// Convolve a `[C, H, W]` input; the output keeps the spatial extent.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (c, h, w) = chw(input)?;
    if c != params.in_channels() {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {c}",
            params.in_channels()
        )));
    }
    let out_c = params.out_channels();
    let hw = h * w;
    let k = params.patch_len();

    let mut out = Vec::with_capacity(out_c * hw);
    for &b in params.bias.data() {
        out.extend(std::iter::repeat_n(b, hw));
    }
    let cols;
    let rhs: &[T] = if params.kernel_size() == 1 {
        input.data()
    } else {
        cols = im2col3(input.data(), c, h, w);
        &cols
    };
    T::gemm(
        out_c,
        k,
        hw,
        T::one(),
        params.kernels.data(),
        k as isize,
        1,
        rhs,
        hw as isize,
        1,
        T::one(),
        &mut out,
    );
    Ok((
        Tensor::new(vec![out_c, h, w], out)?,
        ConvCache {
            input: input.clone(),
        },
    ))
}

/// Gradients of `Σ grad_output ⊙ output` with respect to input, kernels and bias.
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    params: &ConvParams<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (input, kernels, bias) = conv2d_backward_parts(cache, params, grad_output, true)?;
    Ok(ConvGrads {
        input: input.expect("input gradient requested"),
        kernels,
        bias,
    })
}

/// Backward pass that can skip the input gradient (first layer of a network).
pub(crate) fn conv2d_backward_parts<T: Scalar>(
    cache: &ConvCache<T>,
    params: &ConvParams<T>,
    grad_output: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let (c, h, w) = chw(&cache.input)?;
    let out_c = params.out_channels();
    if grad_output.shape() != [out_c, h, w] {
        return Err(Error::Shape(format!(
            "conv grad_output must be [{out_c}, {h}, {w}], got {:?}",
            grad_output.shape()
        )));
    }
    let hw = h * w;
    let k = params.patch_len();
    let g = grad_output.data();

    let grad_bias: Vec<T> = g.chunks_exact(hw).map(|row| row.iter().copied().sum()).collect();

    let cols;
    let col_data: &[T] = if params.kernel_size() == 1 {
        cache.input.data()
    } else {
        cols = im2col3(cache.input.data(), c, h, w);
        &cols
    };
    // dK = G · colsᵀ
    let mut grad_k = vec![T::zero(); out_c * k];
    T::gemm(
        out_c,
        hw,
        k,
        T::one(),
        g,
        hw as isize,
        1,
        col_data,
        1,
        hw as isize,
        T::zero(),
        &mut grad_k,
    );

    let grad_input = if want_input {
        // dcols = Kᵀ · G
        let mut grad_cols = vec![T::zero(); k * hw];
        T::gemm(
            k,
            out_c,
            hw,
            T::one(),
            params.kernels.data(),
            1,
            k as isize,
            g,
            hw as isize,
            1,
            T::zero(),
            &mut grad_cols,
        );
        let data = if params.kernel_size() == 1 {
            grad_cols
        } else {
            col2im3(&grad_cols, c, h, w)
        };
        Some(Tensor::new(vec![c, h, w], data)?)
    } else {
        None
    };

    Ok((
        grad_input,
        Tensor::new(params.kernels.shape().to_vec(), grad_k)?,
        Tensor::new(vec![out_c], grad_bias)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_kernel() -> ConvParams<f32> {
        let mut k = vec![0.0f32; 9];
        k[4] = 1.0;
        ConvParams::new(
            Tensor::new(vec![1, 1, 3, 3], k).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let p = delta_kernel();
        let (y, cache) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y, x);
        let g = conv2d_backward(&cache, &p, &x).unwrap();
        assert_eq!(g.input, x);
    }

    #[test]
    fn zero_kernels_give_bias_planes() {
        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|v| v as f32).collect()).unwrap();
        let p = ConvParams::new(
            Tensor::zeros(&[3, 2, 3, 3]).unwrap(),
            Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let (y, _) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
        for (o, plane) in y.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == p.bias.data()[o]));
        }
    }

    #[test]
    fn zero_grad_output_gives_zero_grads() {
        let x = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f32 * 0.1).collect()).unwrap();
        let p = ConvParams::new(
            Tensor::filled(&[2, 2, 3, 3], 0.3).unwrap(),
            Tensor::filled(&[2], 0.1).unwrap(),
        )
        .unwrap();
        let (_, cache) = conv2d_forward(&x, &p).unwrap();
        let g = conv2d_backward(&cache, &p, &Tensor::zeros(&[2, 3, 3]).unwrap()).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernels.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_preserves_spatial_dims() {
        let x = Tensor::<f32>::filled(&[4, 5, 7], 1.0).unwrap();
        let p = ConvParams::new(
            Tensor::filled(&[2, 4, 1, 1], 0.25).unwrap(),
            Tensor::zeros(&[2]).unwrap(),
        )
        .unwrap();
        let (y, _) = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[2, 5, 7]);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(&[2, 3, 3]).unwrap();
        let p = delta_kernel();
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_unsupported_kernel_size() {
        let r = ConvParams::<f32>::new(
            Tensor::zeros(&[1, 1, 5, 5]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        );
        assert!(r.is_err());
    }
}
