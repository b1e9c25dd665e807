//! Random affine (rotation, shear, zoom, translation) and crop-and-resize
//! augmentation of single-channel images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::resize_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Augmentation magnitudes. Every range is symmetric about the identity:
/// rotation in ±`rotation_deg`, shear in ±`shear_deg`, zoom in
/// `1 ± zoom`, translation in ±`translate` of the image side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    rotation_deg: f64,
    shear_deg: f64,
    zoom: f64,
    translate: f64,
    crop_fraction: f64,
    seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            shear_deg: 10.0,
            zoom: 0.1,
            translate: 0.1,
            crop_fraction: 0.9,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn new(
        rotation_deg: f64,
        shear_deg: f64,
        zoom: f64,
        translate: f64,
        crop_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let all = [rotation_deg, shear_deg, zoom, translate, crop_fraction];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("augmentation ranges must be finite".into()));
        }
        if rotation_deg < 0.0 || shear_deg < 0.0 || zoom < 0.0 || translate < 0.0 {
            return Err(Error::InvalidConfig(
                "augmentation ranges are magnitudes and must be non-negative".into(),
            ));
        }
        if shear_deg >= 90.0 || zoom >= 1.0 || translate >= 1.0 {
            return Err(Error::InvalidConfig(
                "shear must be < 90°, zoom < 1 and translation < 1".into(),
            ));
        }
        if !(crop_fraction > 0.5 && crop_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "crop fraction must lie in (0.5, 1], got {crop_fraction}"
            )));
        }
        Ok(Self {
            rotation_deg,
            shear_deg,
            zoom,
            translate,
            crop_fraction,
            seed,
        })
    }

    /// A spec whose every sample is the identity transform.
    pub fn identity(seed: u64) -> Self {
        Self {
            rotation_deg: 0.0,
            shear_deg: 0.0,
            zoom: 0.0,
            translate: 0.0,
            crop_fraction: 1.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn crop_fraction(&self) -> f64 {
        self.crop_fraction
    }
}

/// One concrete affine transform about the image centre.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams {
    /// Counter-clockwise as displayed (y axis pointing down).
    pub rotation_deg: f64,
    /// Horizontal shear angle.
    pub shear_deg: f64,
    pub zoom: f64,
    /// Shifts as fractions of the width / height.
    pub translate_x: f64,
    pub translate_y: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            shear_deg: 0.0,
            zoom: 1.0,
            translate_x: 0.0,
            translate_y: 0.0,
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::identity()
        }
    }

    pub fn sample<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> Self {
        Self {
            rotation_deg: symmetric(rng, spec.rotation_deg),
            shear_deg: symmetric(rng, spec.shear_deg),
            zoom: 1.0 + symmetric(rng, spec.zoom),
            translate_x: symmetric(rng, spec.translate),
            translate_y: symmetric(rng, spec.translate),
        }
    }

    /// Forward matrix: zoom · rotation · shear.
    fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let z = self.zoom;
        // rotation [[c, s], [-s, c]] times shear [[1, k], [0, 1]]
        [[z * c, z * (c * k + s)], [-z * s, z * (c - s * k)]]
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, magnitude: f64) -> f64 {
    if magnitude == 0.0 {
        0.0
    } else {
        rng.random_range(-magnitude..=magnitude)
    }
}

fn plane(image: &Tensor<f32>) -> Result<(usize, usize)> {
    match *image.shape() {
        [1, h, w] => Ok((h, w)),
        _ => Err(Error::Shape(format!(
            "augmentation expects a [1, H, W] image, got {:?}",
            image.shape()
        ))),
    }
}

/// Bilinear sample with zero outside the image.
fn sample_zero(src: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let at = |xi: f64, yi: f64| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Apply an affine transform about the image centre by inverse mapping.
pub fn apply_affine(image: &Tensor<f32>, params: &AffineParams) -> Result<Tensor<f32>> {
    let (h, w) = plane(image)?;
    let [[a, b], [c, d]] = params.matrix();
    let det = a * d - b * c;
    if det.abs() < 1e-12 {
        return Err(Error::InvalidConfig("degenerate affine transform".into()));
    }
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tx = params.translate_x * w as f64;
    let ty = params.translate_y * h as f64;
    let src = image.data();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let rx = x as f64 - cx - tx;
            let ry = y as f64 - cy - ty;
            let sx = inv[0][0] * rx + inv[0][1] * ry + cx;
            let sy = inv[1][0] * rx + inv[1][1] * ry + cy;
            out.push(sample_zero(src, w, h, sx, sy));
        }
    }
    Tensor::new(vec![1, h, w], out)
}

/// Cut a square window `fraction` of the side, with its top-left corner at
/// (`offset_x`, `offset_y`) in pixels, and resize it back to full size.
pub fn crop_and_resize(image: &Tensor<f32>, fraction: f64, offset_x: f64, offset_y: f64) -> Result<Tensor<f32>> {
    let (h, w) = plane(image)?;
    let cw = fraction * w as f64;
    let ch = fraction * h as f64;
    let src = image.data();
    if fraction == 1.0 && offset_x == 0.0 && offset_y == 0.0 {
        return Tensor::new(vec![1, h, w], resize_bilinear(src, w, h, w, h));
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = (offset_y + (y as f64 + 0.5) * ch / h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        for x in 0..w {
            let sx = (offset_x + (x as f64 + 0.5) * cw / w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            out.push(sample_zero(src, w, h, sx, sy));
        }
    }
    Tensor::new(vec![1, h, w], out)
}

/// Random affine followed by a random crop-and-resize; output stays in `[0, 1]`.
pub fn augment<R: Rng + ?Sized>(image: &Tensor<f32>, spec: &AugmentSpec, rng: &mut R) -> Result<Tensor<f32>> {
    let (h, w) = plane(image)?;
    let params = AffineParams::sample(spec, rng);
    let slack = 1.0 - spec.crop_fraction;
    let ox = if slack > 0.0 { rng.random_range(0.0..=slack) * w as f64 } else { 0.0 };
    let oy = if slack > 0.0 { rng.random_range(0.0..=slack) * h as f64 } else { 0.0 };
    let warped = apply_affine(image, &params)?;
    let cropped = crop_and_resize(&warped, spec.crop_fraction, ox, oy)?;
    Ok(cropped.map(|v| v.clamp(0.0, 1.0)))
}

/// [`augment`] driven by a dedicated seed (used for synthetic records).
pub fn augment_seeded(image: &Tensor<f32>, spec: &AugmentSpec, seed: u64) -> Result<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    augment(image, spec, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(side: usize) -> Tensor<f32> {
        let data = (0..side * side).map(|i| (i % 97) as f32 / 96.0).collect();
        Tensor::new(vec![1, side, side], data).unwrap()
    }

    #[test]
    fn identity_spec_is_bit_exact() {
        let img = ramp(32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&img, &AugmentSpec::identity(0), &mut rng).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn output_in_unit_range() {
        let img = ramp(40);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = AugmentSpec::default();
        for _ in 0..10 {
            let out = augment(&img, &spec, &mut rng).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentSpec::new(15.0, 10.0, 0.1, 0.1, 0.5, 0).is_err());
        assert!(AugmentSpec::new(15.0, 10.0, 0.1, 0.1, 1.01, 0).is_err());
        assert!(AugmentSpec::new(-1.0, 10.0, 0.1, 0.1, 0.9, 0).is_err());
        assert!(AugmentSpec::new(15.0, 10.0, 0.1, 0.1, 0.9, 0).is_ok());
    }

    #[test]
    fn translation_shifts_content() {
        let mut data = vec![0.0f32; 64];
        data[3 * 8 + 3] = 1.0;
        let img = Tensor::new(vec![1, 8, 8], data).unwrap();
        let p = AffineParams {
            translate_x: 0.25,
            ..AffineParams::identity()
        };
        let out = apply_affine(&img, &p).unwrap();
        assert!((out.data()[3 * 8 + 5] - 1.0).abs() < 1e-6);
        assert!((out.sum() - 1.0).abs() < 1e-6);
    }
}
