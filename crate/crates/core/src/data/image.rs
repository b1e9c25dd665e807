//! 8-bit grayscale image decoding, bilinear resizing and PGM output.

use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::INPUT_SIZE;
use crate::tensor::Tensor;

/// An 8-bit single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{width}×{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Quantize a `[1, H, W]` (or `[H, W]`) tensor in `[0, 1]` to 8 bits.
    pub fn from_unit_tensor(t: &Tensor<f32>) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [1, h, w] | [h, w] => (h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "expected [1, H, W] or [H, W], got {:?}",
                    t.shape()
                )))
            }
        };
        let pixels = t
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(w, h, pixels)
    }
}

/// Decode an 8-bit grayscale PGM (P5) or PNG file.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            GrayImage::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(decode_err(format!(
            "expected an 8-bit single-channel image, found {:?}",
            other.color()
        ))),
    }
}

/// Bilinear resize of a single float plane using pixel-centre alignment;
/// samples beyond the border clamp to the edge.
pub fn resize_bilinear(src: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(w, out_w);
    let ys = axis(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Scale pixels to `[0, 1]` and resize to a `[1, size, size]` tensor.
pub fn gray_to_tensor(img: &GrayImage, size: usize) -> Result<Tensor<f32>> {
    let unit: Vec<f32> = img.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let data = resize_bilinear(&unit, img.width, img.height, size, size);
    Tensor::new(vec![1, size, size], data)
}

/// Load an image as a `[1, 224, 224]` tensor in `[0, 1]`.
pub fn decode_and_resize(path: &Path) -> Result<Tensor<f32>> {
    decode_and_resize_to(path, INPUT_SIZE)
}

pub fn decode_and_resize_to(path: &Path, size: usize) -> Result<Tensor<f32>> {
    gray_to_tensor(&read_gray(path)?, size)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    bytes
}

/// Write a binary (P5) PGM.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

/// Write an 8-bit grayscale or RGB PNG (`channels` 1 or 3).
pub fn write_png(path: &Path, width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<()> {
    let color = match channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => return Err(Error::InvalidInput(format!("unsupported channel count {channels}"))),
    };
    let mut bytes = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut bytes),
        pixels,
        width as u32,
        height as u32,
        color,
    )
    .map_err(|e| Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_maps_to_unit_value() {
        let img = GrayImage::new(224, 224, vec![128; 224 * 224]).unwrap();
        let t = gray_to_tensor(&img, 224).unwrap();
        assert_eq!(t.shape(), &[1, 224, 224]);
        assert!(t.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn camera_resolution_resizes_to_input() {
        let pixels = (0..320 * 240).map(|i| (i % 251) as u8).collect();
        let img = GrayImage::new(320, 240, pixels).unwrap();
        let t = gray_to_tensor(&img, 224).unwrap();
        assert_eq!(t.shape(), &[1, 224, 224]);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn pgm_round_trip_through_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_gray(&path).unwrap(), img);
    }

    #[test]
    fn png_round_trip_and_rgb_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("g.png");
        let img = GrayImage::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        write_png(&gray, 2, 2, 1, &img.pixels).unwrap();
        assert_eq!(read_gray(&gray).unwrap(), img);

        let rgb = dir.path().join("c.png");
        write_png(&rgb, 1, 1, 3, &[1, 2, 3]).unwrap();
        assert!(matches!(read_gray(&rgb), Err(Error::Decode { .. })));
    }

    #[test]
    fn unreadable_file_is_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.pgm");
        std::fs::write(&path, b"not an image").unwrap();
        assert!(matches!(read_gray(&path), Err(Error::Decode { .. })));
        assert!(matches!(
            read_gray(&dir.path().join("missing.png")),
            Err(Error::Decode { .. })
        ));
    }
}
