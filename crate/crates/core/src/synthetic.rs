//! Thermal-like toy images whose classes are separable by construction.
//!
//! Each frame is a cool, noisy background with a faint horizontal gradient
//! and a hot cross. Class `c` (out of `K`) puts the cross's horizontal and
//! vertical bars in the `c`-th of `K` equal bands, so class identity is
//! carried by where the heat is.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::image::{gray_to_tensor, write_pgm, GrayImage};
use crate::data::{write_manifest, Dataset, SampleRecord, Samples};
use crate::error::Result;
use crate::task::Task;

/// One frame of class `class` out of `k`.
pub fn synth_frame<R: Rng + ?Sized>(class: usize, k: usize, side: usize, rng: &mut R) -> GrayImage {
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let s = side as f64;
    let band = s / k as f64;
    let centre = (class as f64 + 0.5) * band - 0.5 + rng.random_range(-0.1..0.1) * band;
    let half = band * rng.random_range(0.4..0.5);
    let peak = rng.random_range(0.85..1.0);
    let base = rng.random_range(0.03..0.08);
    let tilt = rng.random_range(-0.03..0.03);
    let pixels = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            let row = (half + 0.5 - (y - centre).abs()).clamp(0.0, 1.0);
            let col = (half + 0.5 - (x - centre).abs()).clamp(0.0, 1.0);
            let inside = row.max(col);
            let v = base + tilt * (x / s) + peak * inside + noise.sample(rng);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    GrayImage::new(side, side, pixels).expect("consistent size")
}

/// `per_class` in-memory frames per class of `task`, resized to `size`.
pub fn synthetic_samples(task: Task, per_class: usize, size: usize, seed: u64) -> Result<Samples> {
    let k = task.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(k * per_class);
    let mut labels = Vec::with_capacity(k * per_class);
    for i in 0..k * per_class {
        let c = i % k;
        images.push(gray_to_tensor(&synth_frame(c, k, size, &mut rng), size)?);
        labels.push(c);
    }
    Samples::new(images, labels, k)
}

/// Write `per_class` PGM frames per class of `task` under `dir` together
/// with `dir/manifest.csv`. Frames are grouped into `videos_per_class`
/// pseudo-videos per class. Returns the dataset the manifest describes.
pub fn write_corpus(
    dir: &Path,
    task: Task,
    per_class: usize,
    side: usize,
    videos_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    let k = task.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = {
        std::fs::create_dir_all(dir)?;
        dir.canonicalize()?
    };
    let mut records = Vec::with_capacity(k * per_class);
    for (c, label) in task.classes().iter().enumerate() {
        let slug = label.replace('+', "_");
        for j in 0..per_class {
            let path = root.join("frames").join(format!("{slug}_{j:04}.pgm"));
            write_pgm(&path, &synth_frame(c, k, side, &mut rng))?;
            let video = format!("{slug}-v{}", j % videos_per_class.max(1));
            records.push(SampleRecord::new(path, label, task, &video)?);
        }
    }
    let dataset = Dataset::new(records)?;
    write_manifest(&root.join("manifest.csv"), &dataset)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_and_in_range() {
        let a = synthetic_samples(Task::Objects, 2, 16, 4).unwrap();
        let b = synthetic_samples(Task::Objects, 2, 16, 4).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        assert!(a.images.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn corpus_manifest_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write_corpus(dir.path(), Task::Fire, 3, 20, 2, 1).unwrap();
        let loaded = crate::data::load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded, ds);
        assert_eq!(loaded.count("no-fire"), 3);
    }
}
