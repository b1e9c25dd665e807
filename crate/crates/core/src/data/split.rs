//! Class balancing, the video-grouped held-out test split and stratified
//! k-fold assignment.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{AugmentSpec, Dataset};
use crate::error::{Error, Result};

/// Pad every class with synthetic copies of its own records until it
/// matches the largest class. Copies cycle through the class's original
/// records; each gets its own augmentation seed drawn from `spec`'s seed.
pub fn balance_classes(dataset: &Dataset, spec: &AugmentSpec) -> Result<Dataset> {
    let task = dataset
        .task()
        .ok_or_else(|| Error::CannotBalance("dataset is empty".into()))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); task.num_classes()];
    for (i, r) in dataset.records().iter().enumerate() {
        if !r.is_synthetic() {
            by_class[r.class_index()].push(i);
        }
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::CannotBalance(format!(
            "class '{}' has no original records to augment",
            task.classes()[c]
        )));
    }
    let target = task
        .classes()
        .iter()
        .map(|c| dataset.count(c))
        .max()
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    let mut records = dataset.records().to_vec();
    for (c, sources) in by_class.iter().enumerate() {
        let have = dataset.count(task.classes()[c]);
        for j in 0..target - have {
            let mut copy = dataset.records()[sources[j % sources.len()]].clone();
            copy.synthetic = Some(rng.random());
            records.push(copy);
        }
    }
    Dataset::new(records)
}

/// Per-class test quota: `floor(count × fraction)`, at least 1.
pub fn test_quotas(counts: &BTreeMap<String, usize>, fraction: f64) -> Result<BTreeMap<String, usize>> {
    check_fraction(fraction)?;
    Ok(counts
        .iter()
        .map(|(label, &n)| {
            // The epsilon keeps exact products such as 30 × 0.1 from flooring low.
            let q = ((n as f64 * fraction) + 1e-9).floor() as usize;
            (label.clone(), q.max(1))
        })
        .collect())
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "test fraction must lie in (0, 1), got {fraction}"
        )))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitSummary {
    pub fraction: f64,
    pub fallback: bool,
    pub quotas: BTreeMap<String, usize>,
    pub train_val_counts: BTreeMap<String, usize>,
    pub test_counts: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct TestSplit {
    pub train_val: Dataset,
    pub test: Dataset,
    /// True when video grouping missed a quota and records were
    /// stratified individually instead.
    pub fallback: bool,
    pub summary: SplitSummary,
}

/// Hold out a stratified test set, keeping each video entirely on one side.
///
/// Videos are visited in shuffled order and taken while no class exceeds
/// its quota; a second pass allows up to 20% overshoot. If any class still
/// ends more than 20% away from its quota the split is redone record by
/// record. Synthetic records always stay in `train_val`.
pub fn split_test<R: Rng + ?Sized>(dataset: &Dataset, fraction: f64, rng: &mut R) -> Result<TestSplit> {
    let quotas = test_quotas(dataset.class_counts(), fraction)?;
    let records = dataset.records();

    let mut videos: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if !r.is_synthetic() {
            videos.entry(r.video_id.as_str()).or_default().push(i);
        }
    }
    let mut order: Vec<Vec<usize>> = videos.into_values().collect();
    order.shuffle(rng);

    let video_counts = |members: &[usize]| -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for &i in members {
            *m.entry(records[i].label.as_str()).or_insert(0) += 1;
        }
        m
    };
    let mut taken = vec![false; order.len()];
    let mut test_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for slack in [1.0, 1.2] {
        for (v, members) in order.iter().enumerate() {
            if taken[v] {
                continue;
            }
            let counts = video_counts(members);
            let needed = counts
                .keys()
                .any(|l| test_counts.get(l).copied().unwrap_or(0) < quotas[*l]);
            let fits = counts.iter().all(|(l, &n)| {
                (test_counts.get(l).copied().unwrap_or(0) + n) as f64 <= quotas[*l] as f64 * slack + 1e-9
            });
            if needed && fits {
                taken[v] = true;
                for (l, n) in counts {
                    *test_counts.entry(l).or_insert(0) += n;
                }
            }
        }
    }
    let within = quotas.iter().all(|(l, &q)| {
        let got = test_counts.get(l.as_str()).copied().unwrap_or(0) as f64;
        (got - q as f64).abs() <= 0.2 * q as f64 + 1e-9
    });

    let mut in_test = vec![false; records.len()];
    let fallback = !within;
    if within {
        for (v, members) in order.iter().enumerate() {
            if taken[v] {
                for &i in members {
                    in_test[i] = true;
                }
            }
        }
    } else {
        log::warn!("video grouping cannot meet the per-class test quotas within ±20%; stratifying by record instead");
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if !r.is_synthetic() {
                by_class.entry(r.label.as_str()).or_default().push(i);
            }
        }
        for (label, mut members) in by_class {
            members.shuffle(rng);
            for &i in members.iter().take(quotas[label]) {
                in_test[i] = true;
            }
        }
    }

    let mut test = Vec::new();
    let mut train_val = Vec::new();
    for (r, &t) in records.iter().zip(&in_test) {
        if t {
            test.push(r.clone());
        } else {
            train_val.push(r.clone());
        }
    }
    let test = Dataset::new(test)?;
    let train_val = Dataset::new(train_val)?;
    let summary = SplitSummary {
        fraction,
        fallback,
        quotas,
        train_val_counts: train_val.class_counts().clone(),
        test_counts: test.class_counts().clone(),
    };
    Ok(TestSplit {
        train_val,
        test,
        fallback,
        summary,
    })
}

/// Assign each label to one of `k` folds so that every class is spread as
/// evenly as possible. Within a class the records are shuffled and dealt
/// round-robin; the dealing position carries over from one class to the
/// next so fold totals also stay within one of each other.
pub fn stratified_fold_assignment<R: Rng + ?Sized>(labels: &[usize], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((c, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::Stratification(format!(
            "class {c} has {} records, fewer than k = {k}",
            members.len()
        )));
    }
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for members in by_class.values_mut() {
        members.shuffle(rng);
        for (j, &i) in members.iter().enumerate() {
            fold[i] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(fold)
}

/// Record indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Split `train_val` into `k` stratified folds. Synthetic records are only
/// ever used for training, and never in a fold whose validation part holds
/// the image they were made from.
pub fn stratified_folds<R: Rng + ?Sized>(train_val: &Dataset, k: usize, rng: &mut R) -> Result<Vec<Fold>> {
    let records = train_val.records();
    let real: Vec<usize> = (0..records.len()).filter(|&i| !records[i].is_synthetic()).collect();
    let labels: Vec<usize> = real.iter().map(|&i| records[i].class_index()).collect();
    let assignment = stratified_fold_assignment(&labels, k, rng).map_err(|e| match e {
        Error::Stratification(_) => {
            let task = train_val.task().expect("non-empty");
            let small: Vec<String> = task
                .classes()
                .iter()
                .filter(|c| {
                    let n = records.iter().filter(|r| !r.is_synthetic() && r.label == **c).count();
                    n > 0 && n < k
                })
                .map(|c| c.to_string())
                .collect();
            Error::Stratification(format!("classes [{}] have fewer than k = {k} records", small.join(", ")))
        }
        other => other,
    })?;
    let folds = (0..k)
        .map(|f| {
            let validation: Vec<usize> = real
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == f)
                .map(|(&i, _)| i)
                .collect();
            let held: HashSet<&std::path::Path> =
                validation.iter().map(|&i| records[i].path.as_path()).collect();
            let train = (0..records.len())
                .filter(|&i| {
                    let r = &records[i];
                    if r.is_synthetic() {
                        !held.contains(r.path.as_path())
                    } else {
                        assignment[real.binary_search(&i).expect("real index")] != f
                    }
                })
                .collect();
            Fold { train, validation }
        })
        .collect();
    Ok(folds)
}
