//! Manifest-driven datasets: ingestion, image decoding, augmentation,
//! class balancing and splitting.

pub mod augment;
pub mod image;
pub mod split;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::task::Task;
use crate::tensor::Tensor;

pub use augment::{augment, AffineParams, AugmentSpec};
pub use image::{decode_and_resize, decode_and_resize_to, GrayImage};
pub use split::{balance_classes, split_test, stratified_folds, test_quotas, Fold, TestSplit};

pub const MANIFEST_HEADER: [&str; 4] = ["path", "label", "task_set", "video_id"];

/// One labelled frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub label: String,
    pub task_set: Task,
    pub video_id: String,
    /// Augmentation seed for a balancing copy of the image at `path`;
    /// `None` for original frames.
    #[serde(skip)]
    pub synthetic: Option<u64>,
}

impl SampleRecord {
    pub fn new(path: impl Into<PathBuf>, label: &str, task_set: Task, video_id: &str) -> Result<Self> {
        if task_set.class_index(label).is_none() {
            return Err(Error::Label(format!(
                "'{label}' is not a {task_set} class (expected one of {})",
                task_set.classes().join(", ")
            )));
        }
        Ok(Self {
            path: path.into(),
            label: label.to_string(),
            task_set,
            video_id: video_id.to_string(),
            synthetic: None,
        })
    }

    pub fn is_synthetic(&self) -> bool {
        self.synthetic.is_some()
    }

    pub fn class_index(&self) -> usize {
        self.task_set
            .class_index(&self.label)
            .expect("label validated at construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<SampleRecord>,
    class_counts: BTreeMap<String, usize>,
}

impl Dataset {
    /// All records must belong to the same task set and carry valid labels.
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        if let Some(first) = records.first() {
            for r in &records {
                if r.task_set != first.task_set {
                    return Err(Error::InvalidInput(format!(
                        "dataset mixes task sets {} and {}",
                        first.task_set, r.task_set
                    )));
                }
                if r.task_set.class_index(&r.label).is_none() {
                    return Err(Error::Label(format!("'{}' is not a {} class", r.label, r.task_set)));
                }
            }
        }
        let mut class_counts = BTreeMap::new();
        for r in &records {
            *class_counts.entry(r.label.clone()).or_insert(0) += 1;
        }
        Ok(Self {
            records,
            class_counts,
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SampleRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> &BTreeMap<String, usize> {
        &self.class_counts
    }

    pub fn count(&self, label: &str) -> usize {
        self.class_counts.get(label).copied().unwrap_or(0)
    }

    /// `None` for an empty dataset.
    pub fn task(&self) -> Option<Task> {
        self.records.first().map(|r| r.task_set)
    }

    /// Class indices in record order.
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(SampleRecord::class_index).collect()
    }

    pub fn synthetic_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_synthetic()).count()
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.records[i].clone()).collect())
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf())
}

/// Read a manifest CSV; relative image paths resolve against the manifest's
/// directory and every image file must exist.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingest(format!("cannot open manifest {}: {e}", path.display())))?;
    parse_manifest(file, &path.display().to_string(), &manifest_dir(path), true)
}

/// Parse manifest CSV from any reader. `source` names the input in errors.
pub fn parse_manifest<R: std::io::Read>(reader: R, source: &str, base: &Path, check_files: bool) -> Result<Dataset> {
    let row_err = |row: usize, message: String| Error::Manifest {
        path: source.to_string(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| row_err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(row_err(
            1,
            format!("header must be exactly '{}'", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let row = row.map_err(|e| row_err(line, e.to_string()))?;
        if row.len() != 4 {
            return Err(row_err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let task: Task = row[2]
            .trim()
            .parse()
            .map_err(|e: Error| row_err(line, e.to_string()))?;
        let label = row[1].trim();
        if task.class_index(label).is_none() {
            return Err(row_err(
                line,
                format!("unknown label '{label}' for task set {task}"),
            ));
        }
        let raw = Path::new(row[0].trim());
        let resolved = if raw.is_absolute() { raw.to_path_buf() } else { base.join(raw) };
        if check_files && !resolved.is_file() {
            return Err(Error::Ingest(format!(
                "{source}, row {line}: image file {} not found",
                resolved.display()
            )));
        }
        if !seen.insert(resolved.clone()) {
            log::warn!("{source}, row {line}: duplicate path {} kept", resolved.display());
        }
        records.push(SampleRecord::new(resolved, label, task, row[3].trim())?);
    }
    Dataset::new(records).map_err(|e| row_err(0, e.to_string()))
}

/// Write a manifest. Paths under the manifest's directory are written
/// relative to it. Synthetic records have no file of their own and are
/// omitted.
pub fn write_manifest(path: &Path, dataset: &Dataset) -> Result<()> {
    let dir = manifest_dir(path);
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    let mut skipped = 0usize;
    for r in dataset.records() {
        if r.is_synthetic() {
            skipped += 1;
            continue;
        }
        let shown = r.path.strip_prefix(&dir).unwrap_or(&r.path);
        w.write_record([
            shown.to_string_lossy().as_ref(),
            r.label.as_str(),
            r.task_set.name(),
            r.video_id.as_str(),
        ])
        .map_err(csv_err)?;
    }
    if skipped > 0 {
        log::debug!("{}: {skipped} synthetic records not written", path.display());
    }
    let bytes = w.into_inner().map_err(|e| Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    write_atomic(path, &bytes)
}

/// Decoded images held in memory, ready for batching.
#[derive(Clone, Debug)]
pub struct Samples {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Samples {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label(format!("label {bad} out of range for {num_classes} classes")));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::Shape("all images must share one shape".into()));
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stack the images at `indices` into an `[N, 1, S, S]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let first = indices
            .first()
            .ok_or_else(|| Error::InvalidShape("cannot batch zero samples".into()))?;
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.images[*first].shape());
        let mut data = Vec::with_capacity(indices.len() * self.images[*first].len());
        for &i in indices {
            data.extend_from_slice(self.images[i].data());
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(shape, data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Decode and resize every record to `[1, size, size]`. Synthetic records
/// are produced by augmenting their source image with their own seed.
pub fn load_samples(dataset: &Dataset, size: usize, spec: &AugmentSpec) -> Result<Samples> {
    let num_classes = dataset.task().map_or(0, Task::num_classes);
    let images = dataset
        .records()
        .par_iter()
        .map(|r| {
            let img = decode_and_resize_to(&r.path, size)?;
            match r.synthetic {
                Some(seed) => augment::augment_seeded(&img, spec, seed),
                None => Ok(img),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Samples::new(images, dataset.labels(), num_classes)
}
