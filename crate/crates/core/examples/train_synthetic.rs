//! Train the tiny depth-1 network on in-memory synthetic frames and report
//! the learning curve and the confusion matrix on the training set.
//!
//! `cargo run --release --example train_synthetic [epochs] [seed]`

use std::time::Instant;

use pyroclass::metrics::{confusion_matrix, predictions, row_percent};
use pyroclass::synthetic::synthetic_samples;
use pyroclass::train::{accuracy_of, predict_samples, train, DecayMode, TrainConfig};
use pyroclass::{build_model, ModelConfig, Task};

fn main() -> pyroclass::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let task = Task::Objects;
    let set = synthetic_samples(task, 8, 16, seed)?;
    let config = ModelConfig::tiny(1, task)?.with_dropout(0.0)?;
    let model = build_model(&config, seed)?;
    let tc = TrainConfig {
        batch_size: 1,
        decay_mode: DecayMode::PerEpoch,
        max_epochs: epochs,
        patience: epochs,
        seed,
        ..TrainConfig::for_classes(task.num_classes())
    };

    let start = Instant::now();
    let (best, report) = train(model, &set, &set, &tc)?;
    for (e, (loss, acc)) in report.val_loss.iter().zip(&report.val_acc).enumerate() {
        if e % 20 == 0 || e + 1 == report.val_loss.len() {
            println!("epoch {:>3}  loss {loss:.4}  accuracy {acc:.3}", e + 1);
        }
    }
    let scores = predict_samples(&best, &set, 32)?;
    println!(
        "best epoch {} of {}, training accuracy {:.3} ({:.1} s)",
        report.best_epoch,
        report.stopped_epoch,
        accuracy_of(&scores, &set.labels),
        start.elapsed().as_secs_f64()
    );

    let matrix = confusion_matrix(&predictions(&scores), &set.labels, task.num_classes())?.with_classes(task.classes())?;
    for (name, row) in task.classes().iter().zip(row_percent(&matrix)?) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:5.1}")).collect();
        println!("{name:>18} | {}", cells.join(" | "));
    }
    Ok(())
}
