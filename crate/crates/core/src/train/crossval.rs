use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{stratified_folds, Dataset, Samples};
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, precision_recall_f1, predictions};
use crate::model::{build_model, ModelConfig};
use crate::train::{predict_samples, train, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub report: TrainReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossValReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation across folds.
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train a fresh model on each of `k` stratified folds of `train_val` and
/// score it on the held-out part. `samples` holds the decoded images of
/// `train_val`'s records, in the same order.
///
/// Fold `f` initializes its model and shuffles with seed `config.seed + f`,
/// so results do not depend on how folds are scheduled across threads.
pub fn cross_validate(
    model_config: &ModelConfig,
    train_val: &Dataset,
    samples: &Samples,
    config: &TrainConfig,
    k: usize,
) -> Result<CrossValReport> {
    if samples.len() != train_val.len() {
        return Err(Error::InvalidInput(format!(
            "{} samples for {} records",
            samples.len(),
            train_val.len()
        )));
    }
    config.validate(model_config.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let folds = stratified_folds(train_val, k, &mut rng)?;
    let results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let seed = config.seed.wrapping_add(f as u64);
            let fold_config = TrainConfig { seed, ..config.clone() };
            let tr = samples.subset(&fold.train);
            let va = samples.subset(&fold.validation);
            let model = build_model(model_config, seed)?;
            let (best, report) = train(model, &tr, &va, &fold_config)?;
            let scores = predict_samples(&best, &va, config.batch_size)?;
            let cm = confusion_matrix(&predictions(&scores), &va.labels, model_config.num_classes)?;
            let summary = precision_recall_f1(&cm)?;
            log::info!("fold {}/{k}: accuracy {:.4}, macro F1 {:.4}", f + 1, summary.accuracy, summary.macro_f1);
            Ok(FoldResult {
                fold: f + 1,
                train_size: tr.len(),
                val_size: va.len(),
                accuracy: summary.accuracy,
                macro_f1: summary.macro_f1,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = results.iter().map(|r| r.macro_f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let (mean_macro_f1, std_macro_f1) = mean_std(&f1);
    Ok(CrossValReport {
        k,
        seed: config.seed,
        folds: results,
        mean_accuracy,
        std_accuracy,
        mean_macro_f1,
        std_macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }
}
