//! The five-depth VGG16-derived architecture family.
//!
//! A depth-`d` network keeps the first `d` convolutional sections of VGG16
//! (3×3 convs + ReLU, each section closed by a 2×2 max-pool), squeezes the
//! channels with a 1×1 convolution so the flattened feature vector has the
//! same length at every depth (25088 for 224×224 input), and finishes with
//! two ReLU+dropout dense layers and a softmax classifier.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, ConvCache, ConvParams, DenseCache, DenseParams, DropoutCache, PoolCache, ReluCache,
};
use crate::task::Task;
use crate::tensor::{stack, Scalar, Tensor};

/// Native input resolution of the network.
pub const INPUT_SIZE: usize = 224;

/// Flattened feature length entering the first dense layer at 224×224.
pub const FLATTEN_SIZE: usize = 25088;

/// Output widths of the five VGG16 convolutional sections.
pub const SECTION_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

/// Number of 3×3 convolutions in each VGG16 section.
pub const SECTION_CONVS: [usize; 5] = [2, 2, 3, 3, 3];

pub const DEFAULT_DENSE_WIDTH: usize = 4096;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Output channels of the 1×1 head convolution that keep the flattened
/// size at 25088 for the given depth.
pub fn head_channels(depth: usize) -> Result<usize> {
    if !(1..=5).contains(&depth) {
        return Err(Error::InvalidConfig(format!(
            "depth must be 1..5, got {depth}"
        )));
    }
    let side = INPUT_SIZE >> depth;
    Ok(FLATTEN_SIZE / (side * side))
}

/// Architecture descriptor.
///
/// `input_size`, `dense_width` and `width_divisor` default to the full
/// network (224, 4096, 1); shrinking them keeps the layer topology and
/// gives the desk-scale variants used for checks and toy runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub task: Task,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub input_size: usize,
    pub dense_width: usize,
    pub width_divisor: usize,
}

impl ModelConfig {
    pub fn new(depth: usize, task: Task) -> Result<Self> {
        let config = Self {
            depth,
            task,
            num_classes: task.num_classes(),
            dropout_rate: DEFAULT_DROPOUT,
            input_size: INPUT_SIZE,
            dense_width: DEFAULT_DENSE_WIDTH,
            width_divisor: 1,
        };
        config.validate()?;
        Ok(config)
    }

    /// 16×16 input and 8-wide dense layers; same topology as the full model.
    pub fn tiny(depth: usize, task: Task) -> Result<Self> {
        Self::new(depth, task)?
            .with_input_size(16)?
            .with_dense_width(8)
    }

    pub fn with_input_size(mut self, size: usize) -> Result<Self> {
        self.input_size = size;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dense_width(mut self, width: usize) -> Result<Self> {
        self.dense_width = width;
        self.validate()?;
        Ok(self)
    }

    pub fn with_width_divisor(mut self, divisor: usize) -> Result<Self> {
        self.width_divisor = divisor;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        self.dropout_rate = rate;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        head_channels(self.depth)?;
        if self.num_classes != self.task.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "task {} has {} classes, config says {}",
                self.task,
                self.task.num_classes(),
                self.num_classes
            )));
        }
        nn::check_dropout_rate(self.dropout_rate)?;
        let scale = 1usize << self.depth;
        if self.input_size < scale || self.input_size % scale != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {} must be a positive multiple of {scale} at depth {}",
                self.input_size, self.depth
            )));
        }
        if self.dense_width == 0 || self.width_divisor == 0 {
            return Err(Error::InvalidConfig(
                "dense width and width divisor must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Channel width of convolutional section `s` (0-based).
    pub fn section_width(&self, s: usize) -> usize {
        (SECTION_WIDTHS[s] / self.width_divisor).max(1)
    }

    pub fn head_channels(&self) -> usize {
        head_channels(self.depth).expect("validated depth")
    }

    /// Spatial side length after the last pooling stage.
    pub fn feature_side(&self) -> usize {
        self.input_size >> self.depth
    }

    pub fn flatten_size(&self) -> usize {
        let side = self.feature_side();
        self.head_channels() * side * side
    }

    /// The ordered layer stack this configuration realizes.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut channels = 1;
        for s in 0..self.depth {
            let width = self.section_width(s);
            for _ in 0..SECTION_CONVS[s] {
                specs.push(LayerSpec::Conv {
                    in_channels: channels,
                    out_channels: width,
                    kernel: 3,
                });
                specs.push(LayerSpec::Relu);
                channels = width;
            }
            specs.push(LayerSpec::MaxPool);
        }
        specs.push(LayerSpec::Conv {
            in_channels: channels,
            out_channels: self.head_channels(),
            kernel: 1,
        });
        specs.push(LayerSpec::Flatten {
            features: self.flatten_size(),
        });
        let mut features = self.flatten_size();
        for _ in 0..2 {
            specs.push(LayerSpec::Dense {
                in_features: features,
                out_features: self.dense_width,
            });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout {
                rate: self.dropout_rate,
            });
            features = self.dense_width;
        }
        specs.push(LayerSpec::Dense {
            in_features: features,
            out_features: self.num_classes,
        });
        specs.push(LayerSpec::Softmax);
        specs
    }

    /// Total number of kernel, weight and bias entries.
    pub fn param_count(&self) -> usize {
        self.layer_specs().iter().map(LayerSpec::param_count).sum()
    }
}

/// Shape-only description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    MaxPool,
    Flatten {
        features: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => out_features * in_features + out_features,
            _ => 0,
        }
    }

    /// Shapes of the (weights, bias) tensors, if the layer has parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => write!(f, "conv{kernel}x{kernel}({in_channels}→{out_channels})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool => f.write_str("pool"),
            LayerSpec::Flatten { features } => write!(f, "flatten({features})"),
            LayerSpec::Dense { out_features, .. } => write!(f, "dense({out_features})"),
            LayerSpec::Dropout { .. } => f.write_str("dropout"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

/// One realized layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv(ConvParams<T>),
    Relu,
    MaxPool,
    Flatten,
    Dense(DenseParams<T>),
    Dropout(f64),
    Softmax,
}

impl<T: Scalar> Layer<T> {
    fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv(p) => Some((&p.kernels, &p.bias)),
            Layer::Dense(p) => Some((&p.weights, &p.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Conv(p) => Some((&mut p.kernels, &mut p.bias)),
            Layer::Dense(p) => Some((&mut p.weights, &mut p.bias)),
            _ => None,
        }
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv(p) => Layer::Conv(ConvParams {
                kernels: p.kernels.cast(),
                bias: p.bias.cast(),
            }),
            Layer::Dense(p) => Layer::Dense(DenseParams {
                weights: p.weights.cast(),
                bias: p.bias.cast(),
            }),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool => Layer::MaxPool,
            Layer::Flatten => Layer::Flatten,
            Layer::Dropout(r) => Layer::Dropout(*r),
            Layer::Softmax => Layer::Softmax,
        }
    }
}

/// A realized network: configuration, ordered layers, and bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub layers: Vec<Layer<T>>,
    /// Seed used for parameter initialization.
    pub seed: u64,
    /// Number of optimizer updates applied so far (0 = untrained).
    pub step: u64,
}

/// Parameter gradients aligned with [`Model::layers`].
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub layers: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    l.params().map(|(w, b)| {
                        (
                            Tensor::zeros(w.shape()).expect("valid shape"),
                            Tensor::zeros(b.shape()).expect("valid shape"),
                        )
                    })
                })
                .collect(),
        }
    }

    /// Gradient tensors in declaration order (weights then bias per layer).
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten().flat_map(|(w, b)| [w, b])
    }
}

enum LayerCache<T> {
    Conv(Vec<ConvCache<T>>),
    Relu(ReluCache),
    Pool(Vec<PoolCache>),
    Flatten(Vec<usize>),
    Dense(DenseCache<T>),
    Dropout(DropoutCache<T>),
    Softmax,
}

/// Everything the backward pass needs from one forward call.
pub struct Trace<T = f32> {
    caches: Vec<LayerCache<T>>,
    logits: Tensor<T>,
    kept: Option<(usize, Tensor<T>)>,
}

impl<T: Scalar> Trace<T> {
    /// Pre-softmax scores `[N, K]`.
    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    /// Output of the layer requested via `keep_output`, if any.
    pub fn kept_output(&self) -> Option<&Tensor<T>> {
        self.kept.as_ref().map(|(_, t)| t)
    }
}

/// Result of [`Model::forward`].
pub struct Forward<T = f32> {
    /// Softmax scores `[N, K]`.
    pub scores: Tensor<T>,
    /// Retained only for training passes.
    pub trace: Option<Trace<T>>,
}

fn split_batch<T: Scalar>(x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let sample_shape = x.shape()[1..].to_vec();
    (0..x.shape()[0])
        .map(|i| Tensor::new(sample_shape.clone(), x.outer_slice(i).to_vec()))
        .collect()
}

/// Apply a per-sample layer to every sample of a batch in parallel.
fn per_sample<T: Scalar, C: Send>(
    x: &Tensor<T>,
    f: impl Fn(&Tensor<T>) -> Result<(Tensor<T>, C)> + Sync + Send,
) -> Result<(Tensor<T>, Vec<C>)> {
    let samples = split_batch(x)?;
    let results: Vec<Result<(Tensor<T>, C)>> = samples.par_iter().map(&f).collect();
    let mut outs = Vec::with_capacity(results.len());
    let mut caches = Vec::with_capacity(results.len());
    for r in results {
        let (o, c) = r?;
        outs.push(o);
        caches.push(c);
    }
    Ok((stack(&outs)?, caches))
}

/// Draw `len` values from N(0, std²).
fn normal_vec<T: Scalar>(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<T> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect()
}

/// Build and initialize a model; identical seeds give identical parameters.
///
/// Layers feeding a ReLU get He-normal weights (std √(2/fan_in)); the 1×1
/// head convolution and the classifier get Glorot-normal weights
/// (std √(2/(fan_in+fan_out))). Biases start at zero.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    config.validate()?;
    let specs = config.layer_specs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let feeds_relu = matches!(specs.get(i + 1), Some(LayerSpec::Relu));
        let layer = match *spec {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => {
                let fan_in = in_channels * kernel * kernel;
                let fan_out = out_channels * kernel * kernel;
                let std = init_std(fan_in, fan_out, feeds_relu);
                let (wshape, bshape) = spec.param_shapes().expect("conv has params");
                let kernels = Tensor::new(wshape, normal_vec(&mut rng, spec.param_count() - out_channels, std))?;
                Layer::Conv(ConvParams::new(kernels, Tensor::zeros(&bshape)?)?)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let std = init_std(in_features, out_features, feeds_relu);
                let (wshape, bshape) = spec.param_shapes().expect("dense has params");
                let weights = Tensor::new(wshape, normal_vec(&mut rng, in_features * out_features, std))?;
                Layer::Dense(DenseParams::new(weights, Tensor::zeros(&bshape)?)?)
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool => Layer::MaxPool,
            LayerSpec::Flatten { .. } => Layer::Flatten,
            LayerSpec::Dropout { rate } => Layer::Dropout(rate),
            LayerSpec::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    Ok(Model {
        config: config.clone(),
        layers,
        seed,
        step: 0,
    })
}

fn init_std(fan_in: usize, fan_out: usize, feeds_relu: bool) -> f64 {
    if feeds_relu {
        (2.0 / fan_in as f64).sqrt()
    } else {
        (2.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Model<T> {
    /// Assemble a model from existing layers, checking them against `config`.
    pub fn from_layers(config: ModelConfig, layers: Vec<Layer<T>>, seed: u64, step: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.layer_specs();
        if specs.len() != layers.len() {
            return Err(Error::InvalidConfig(format!(
                "config describes {} layers, got {}",
                specs.len(),
                layers.len()
            )));
        }
        for (i, (spec, layer)) in specs.iter().zip(&layers).enumerate() {
            let ok = match (spec.param_shapes(), layer.params()) {
                (Some((ws, bs)), Some((w, b))) => w.shape() == ws.as_slice() && b.shape() == bs.as_slice(),
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} does not match {spec}"
                )));
            }
        }
        Ok(Self {
            config,
            layers,
            seed,
            step,
        })
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.config.layer_specs()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(Tensor::len).sum()
    }

    /// Parameter tensors in declaration order (weights then bias per layer).
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            seed: self.seed,
            step: self.step,
        }
    }

    /// Index of the 1×1 head convolution.
    pub fn head_conv_index(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Flatten))
            .expect("model has a flatten layer")
            - 1
    }

    /// Index of the ReLU that follows the last 3×3 convolution.
    pub fn last_conv3_relu_index(&self) -> usize {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv(p) if p.kernel_size() == 3))
            .expect("model has a 3×3 conv")
            + 1
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size;
        match *batch.shape() {
            [_, 1, h, w] if h == s && w == s => Ok(()),
            _ => Err(Error::Shape(format!(
                "expected a [N, 1, {s}, {s}] batch, got {:?}",
                batch.shape()
            ))),
        }
    }

    /// Score a batch `[N, 1, S, S]`; the trace is kept only when training.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Forward<T>> {
        let (scores, trace) = self.forward_traced(batch, training, rng, None)?;
        Ok(Forward {
            scores,
            trace: training.then_some(trace),
        })
    }

    /// Inference-mode scores.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(batch, false, &mut rng)?.scores)
    }

    /// Forward pass that always keeps the trace, optionally retaining the
    /// output of layer `keep_output`.
    pub fn forward_traced<R: Rng + ?Sized>(
        &self,
        batch: &Tensor<T>,
        training: bool,
        rng: &mut R,
        keep_output: Option<usize>,
    ) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut kept = None;
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = match layer {
                Layer::Conv(p) => {
                    let (y, c) = per_sample(&x, |s| nn::conv2d_forward(s, p))?;
                    (y, LayerCache::Conv(c))
                }
                Layer::Relu => {
                    let (y, c) = nn::relu_forward(&x);
                    (y, LayerCache::Relu(c))
                }
                Layer::MaxPool => {
                    let (y, c) = per_sample(&x, |s| nn::maxpool2x2_forward(s))?;
                    (y, LayerCache::Pool(c))
                }
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = shape[0];
                    let f = x.len() / n;
                    (x.reshape(&[n, f])?, LayerCache::Flatten(shape))
                }
                Layer::Dense(p) => {
                    let (y, c) = nn::dense_forward(&x, p)?;
                    (y, LayerCache::Dense(c))
                }
                Layer::Dropout(rate) => {
                    let (y, c) = nn::dropout_forward(&x, *rate, rng, training)?;
                    (y, LayerCache::Dropout(c))
                }
                Layer::Softmax => {
                    let y = nn::softmax(&x)?;
                    logits = Some(x);
                    (y, LayerCache::Softmax)
                }
            };
            if keep_output == Some(i) {
                kept = Some((i, y.clone()));
            }
            caches.push(cache);
            x = y;
        }
        let logits = logits.ok_or_else(|| Error::InvalidConfig("model has no softmax".into()))?;
        Ok((
            x,
            Trace {
                caches,
                logits,
                kept,
            },
        ))
    }

    /// Inference-mode logits obtained by feeding `activation` (a batch shaped
    /// like the output of layer `layer - 1`) into layers `layer..`.
    pub fn logits_from(&self, layer: usize, activation: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = activation.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for l in &self.layers[layer..] {
            x = match l {
                Layer::Conv(p) => per_sample(&x, |s| nn::conv2d_forward(s, p))?.0,
                Layer::Relu => nn::relu_forward(&x).0,
                Layer::MaxPool => per_sample(&x, |s| nn::maxpool2x2_forward(s))?.0,
                Layer::Flatten => {
                    let n = x.shape()[0];
                    let f = x.len() / n;
                    x.reshape(&[n, f])?
                }
                Layer::Dense(p) => nn::dense_forward(&x, p)?.0,
                Layer::Dropout(rate) => nn::dropout_forward(&x, *rate, &mut rng, false)?.0,
                Layer::Softmax => return Ok(x),
            };
        }
        Ok(x)
    }

    /// Parameter gradients given the loss gradient with respect to the logits.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let (grads, _) = self.backward_to(trace, grad_logits, 0, true)?;
        Ok(grads)
    }

    /// Backpropagate from the logits down to the input of layer `stop`.
    ///
    /// Returns the parameter gradients of layers `stop..` (all `None` when
    /// `want_params` is false) and the gradient with respect to the input of
    /// layer `stop`, which is `None` only when `stop == 0`.
    pub fn backward_to(
        &self,
        trace: &Trace<T>,
        grad_logits: &Tensor<T>,
        stop: usize,
        want_params: bool,
    ) -> Result<(Gradients<T>, Option<Tensor<T>>)> {
        if grad_logits.shape() != trace.logits.shape() {
            return Err(Error::Shape(format!(
                "grad_logits {:?} does not match logits {:?}",
                grad_logits.shape(),
                trace.logits.shape()
            )));
        }
        let mut grads = Gradients {
            layers: vec![None; self.layers.len()],
        };
        let mut g = grad_logits.clone();
        let top = self.layers.len() - 1;
        debug_assert!(matches!(self.layers[top], Layer::Softmax));
        for i in (stop..top).rev() {
            g = match (&self.layers[i], &trace.caches[i]) {
                (Layer::Conv(p), LayerCache::Conv(caches)) => {
                    let (gin, gk, gb) = conv_batch_backward(p, caches, &g, i > 0, want_params)?;
                    if let (Some(gk), Some(gb)) = (gk, gb) {
                        grads.layers[i] = Some((gk, gb));
                    }
                    match gin {
                        Some(t) => t,
                        None => return Ok((grads, None)),
                    }
                }
                (Layer::Relu, LayerCache::Relu(c)) => nn::relu_backward(c, &g)?,
                (Layer::MaxPool, LayerCache::Pool(caches)) => {
                    let samples = split_batch(&g)?;
                    let outs: Vec<Tensor<T>> = caches
                        .par_iter()
                        .zip(samples.par_iter())
                        .map(|(c, gs)| nn::maxpool2x2_backward(c, gs))
                        .collect::<Result<_>>()?;
                    stack(&outs)?
                }
                (Layer::Flatten, LayerCache::Flatten(shape)) => g.reshape(shape)?,
                (Layer::Dense(p), LayerCache::Dense(c)) => {
                    let dg = nn::dense_backward(c, p, &g)?;
                    if want_params {
                        grads.layers[i] = Some((dg.weights, dg.bias));
                    }
                    dg.input
                }
                (Layer::Dropout(_), LayerCache::Dropout(c)) => nn::dropout_backward(c, &g)?,
                (Layer::Softmax, LayerCache::Softmax) => {
                    return Err(Error::InvalidConfig("softmax must be the last layer".into()))
                }
                _ => return Err(Error::InvalidConfig(format!("trace does not match layer {i}"))),
            };
        }
        Ok((grads, Some(g)))
    }

    /// Class index (lowest index on ties) and score vector of one `[1, S, S]` image.
    pub fn classify(&self, image: &Tensor<T>) -> Result<(usize, Vec<T>)> {
        let batch = Tensor::new(
            [&[1usize][..], image.shape()].concat(),
            image.data().to_vec(),
        )?;
        let scores = self.predict(&batch)?.into_data();
        Ok((argmax(&scores), scores))
    }
}

type ConvBatchGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

/// Per-sample conv backward, summing parameter gradients in sample order so
/// the result does not depend on the thread count.
fn conv_batch_backward<T: Scalar>(
    params: &ConvParams<T>,
    caches: &[ConvCache<T>],
    grad: &Tensor<T>,
    want_input: bool,
    want_params: bool,
) -> Result<ConvBatchGrads<T>> {
    let samples = split_batch(grad)?;
    let chunk = rayon::current_num_threads().max(1);
    let mut gk = want_params.then(|| vec![T::zero(); params.kernels.len()]);
    let mut gb = want_params.then(|| vec![T::zero(); params.bias.len()]);
    let mut inputs = Vec::new();
    for (cs, gs) in caches.chunks(chunk).zip(samples.chunks(chunk)) {
        let parts: Vec<_> = cs
            .par_iter()
            .zip(gs.par_iter())
            .map(|(c, g)| nn::conv2d_backward_parts(c, params, g, want_input))
            .collect::<Result<_>>()?;
        for (gin, k, b) in parts {
            if let (Some(gk), Some(gb)) = (gk.as_mut(), gb.as_mut()) {
                gk.iter_mut().zip(k.data()).for_each(|(a, &v)| *a += v);
                gb.iter_mut().zip(b.data()).for_each(|(a, &v)| *a += v);
            }
            if let Some(t) = gin {
                inputs.push(t);
            }
        }
    }
    let gin = if want_input { Some(stack(&inputs)?) } else { None };
    let gk = gk.map(|v| Tensor::new(params.kernels.shape().to_vec(), v)).transpose()?;
    let gb = gb.map(|v| Tensor::new(params.bias.shape().to_vec(), v)).transpose()?;
    Ok((gin, gk, gb))
}
