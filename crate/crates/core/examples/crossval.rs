//! Stratified k-fold cross-validation of the tiny network on synthetic fire
//! frames, reporting the per-fold accuracy and its spread.

use std::path::PathBuf;

use pyroclass::data::{Dataset, SampleRecord};
use pyroclass::synthetic::synthetic_samples;
use pyroclass::train::{cross_validate, DecayMode, TrainConfig};
use pyroclass::{ModelConfig, Task};

fn main() -> pyroclass::Result<()> {
    let task = Task::Fire;
    let samples = synthetic_samples(task, 12, 16, 5)?;
    // Records only carry labels and grouping here; the images are in memory.
    let records = samples
        .labels
        .iter()
        .enumerate()
        .map(|(i, &c)| SampleRecord::new(PathBuf::from(format!("frame{i}.pgm")), task.classes()[c], task, &format!("v{i}")))
        .collect::<pyroclass::Result<Vec<_>>>()?;
    let dataset = Dataset::new(records)?;

    let model = ModelConfig::tiny(1, task)?.with_dense_width(32)?.with_dropout(0.0)?;
    let config = TrainConfig {
        batch_size: 1,
        decay_mode: DecayMode::PerEpoch,
        max_epochs: 40,
        patience: 5,
        seed: 1,
        ..TrainConfig::for_classes(task.num_classes())
    };
    let report = cross_validate(&model, &dataset, &samples, &config, 3)?;
    for f in &report.folds {
        println!(
            "fold {}: {} train / {} validation, accuracy {:.3}, macro F1 {:.3}, best epoch {}",
            f.fold, f.train_size, f.val_size, f.accuracy, f.macro_f1, f.report.best_epoch
        );
    }
    println!("accuracy {:.3} ± {:.3}", report.mean_accuracy, report.std_accuracy);
    Ok(())
}
