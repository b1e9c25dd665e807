//! Grad-CAM saliency maps.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::{resize_bilinear, write_pgm, write_png, GrayImage};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Which activation the map is computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamLayer {
    /// Output of the 1×1 head convolution, the last conv before the dense layers.
    #[default]
    Head1x1,
    /// ReLU output of the last 3×3 convolution.
    Last3x3,
}

impl std::str::FromStr for CamLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head1x1" | "head-1x1" => Ok(CamLayer::Head1x1),
            "last3x3" | "last-3x3" => Ok(CamLayer::Last3x3),
            other => Err(Error::InvalidConfig(format!(
                "unknown grad-CAM layer '{other}' (expected head1x1 or last3x3)"
            ))),
        }
    }
}

impl CamLayer {
    pub fn layer_index<T: Scalar>(self, model: &Model<T>) -> usize {
        match self {
            CamLayer::Head1x1 => model.head_conv_index(),
            CamLayer::Last3x3 => model.last_conv3_relu_index(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    /// `[S, S]` in `[0, 1]`, where `S` is the model's input size.
    pub values: Tensor<f32>,
    pub class: usize,
    pub layer: CamLayer,
    /// Channel weights: spatial means of the logit gradient.
    pub alphas: Vec<f64>,
}

impl CamMap {
    pub fn is_zero(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0)
    }
}

fn as_batch<T: Scalar>(model: &Model<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let s = model.config.input_size;
    if image.shape() != [1, s, s] {
        return Err(Error::Shape(format!("expected a [1, {s}, {s}] image, got {:?}", image.shape())));
    }
    Tensor::new(vec![1, 1, s, s], image.data().to_vec())
}

/// Activation `A` `[C, h, w]` of `layer` and the gradient of the class logit
/// with respect to it.
pub fn activation_and_gradient<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    class: usize,
    layer: CamLayer,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let k = model.config.num_classes;
    if class >= k {
        return Err(Error::Label(format!("class {class} out of range for {k} classes")));
    }
    let batch = as_batch(model, image)?;
    let idx = layer.layer_index(model);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, trace) = model.forward_traced(&batch, false, &mut rng, Some(idx))?;
    let mut seed = vec![T::zero(); k];
    seed[class] = T::one();
    let (_, grad) = model.backward_to(&trace, &Tensor::new(vec![1, k], seed)?, idx + 1, false)?;
    let grad = grad.expect("stop index is above the input layer");
    let act = trace.kept_output().expect("requested layer output").clone();
    let shape = act.shape()[1..].to_vec();
    Ok((act.reshape(&shape)?, grad.reshape(&shape)?))
}

/// Grad-CAM map of `class` for a `[1, S, S]` image.
pub fn grad_cam<T: Scalar>(model: &Model<T>, image: &Tensor<T>, class: usize, layer: CamLayer) -> Result<CamMap> {
    if model.step == 0 {
        log::warn!("grad-CAM on an untrained model (optimizer step 0)");
    }
    let (act, grad) = activation_and_gradient(model, image, class, layer)?;
    let (c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    let plane = h * w;
    let alphas: Vec<f64> = (0..c)
        .map(|ch| grad.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64)
        .collect();
    let raw: Vec<f32> = (0..plane)
        .map(|p| {
            let v: f64 = (0..c).map(|ch| alphas[ch] * act.data()[ch * plane + p].as_f64()).sum();
            v.max(0.0) as f32
        })
        .collect();
    let s = model.config.input_size;
    let mut up = resize_bilinear(&raw, w, h, s, s);
    let max = up.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        up.iter_mut().for_each(|v| *v /= max);
    } else {
        up.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(CamMap {
        values: Tensor::new(vec![s, s], up)?,
        class,
        layer,
        alphas,
    })
}

/// Classify the image, then explain the winning class.
pub fn cam_for_top_class<T: Scalar>(model: &Model<T>, image: &Tensor<T>, layer: CamLayer) -> Result<(usize, f64, CamMap)> {
    let (class, scores) = model.classify(image)?;
    let map = grad_cam(model, image, class, layer)?;
    Ok((class, scores[class].as_f64(), map))
}

/// `<dir>/<input-stem>.cam.<class>.pgm`
pub fn cam_path(dir: &Path, input: &Path, class_name: &str) -> PathBuf {
    let stem = input.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.cam.{class_name}.pgm"))
}

/// 8-bit PGM of `round(value × 255)`.
pub fn export_cam(map: &CamMap, path: &Path) -> Result<()> {
    write_pgm(path, &GrayImage::from_unit_tensor(&map.values)?)
}

fn heat(v: f32) -> [f32; 3] {
    let ramp = |centre: f32| (1.5 - (4.0 * v - centre).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// RGB PNG of the grayscale source with the map's heat colours blended at 50%.
pub fn export_overlay(source: &Tensor<f32>, map: &CamMap, path: &Path) -> Result<()> {
    let s = map.values.shape()[0];
    if source.len() != s * s {
        return Err(Error::Shape(format!(
            "source {:?} does not match a {s}×{s} map",
            source.shape()
        )));
    }
    let mut rgb = Vec::with_capacity(3 * s * s);
    for (&g, &v) in source.data().iter().zip(map.values.data()) {
        for c in heat(v) {
            rgb.push(((0.5 * g + 0.5 * c).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_png(path, s, s, 3, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::read_gray;
    use crate::model::{build_model, ModelConfig};
    use crate::task::Task;

    fn setup() -> (Model<f32>, Tensor<f32>) {
        let model = build_model(&ModelConfig::tiny(1, Task::Poses).unwrap(), 3).unwrap();
        let img = Tensor::new(vec![1, 16, 16], (0..256).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()).unwrap();
        (model, img)
    }

    #[test]
    fn map_range_and_max() {
        let (model, img) = setup();
        for layer in [CamLayer::Head1x1, CamLayer::Last3x3] {
            for class in 0..3 {
                let m = grad_cam(&model, &img, class, layer).unwrap();
                assert_eq!(m.values.shape(), &[16, 16]);
                assert!(m.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
                if !m.is_zero() {
                    assert_eq!(m.values.data().iter().cloned().fold(0.0, f32::max), 1.0);
                }
            }
        }
    }

    #[test]
    fn class_out_of_range() {
        let (model, img) = setup();
        assert!(matches!(grad_cam(&model, &img, 3, CamLayer::Head1x1), Err(Error::Label(_))));
    }

    #[test]
    fn top_class_matches_explicit_call() {
        let (model, img) = setup();
        let (c, _, m) = cam_for_top_class(&model, &img, CamLayer::Head1x1).unwrap();
        assert_eq!(m, grad_cam(&model, &img, c, CamLayer::Head1x1).unwrap());
    }

    #[test]
    fn pgm_export_round_trip() {
        let (model, img) = setup();
        let m = grad_cam(&model, &img, 0, CamLayer::Last3x3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = cam_path(dir.path(), Path::new("frames/x.pgm"), "sitting");
        assert!(p.ends_with("x.cam.sitting.pgm"));
        export_cam(&m, &p).unwrap();
        let back = read_gray(&p).unwrap();
        let want: Vec<u8> = m.values.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back.pixels, want);
        export_overlay(&img, &m, &dir.path().join("o.png")).unwrap();
    }
}
