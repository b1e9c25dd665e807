//! Train a small pose classifier, then draw grad-CAM maps for one frame at
//! the 1×1 head convolution and at the last 3×3 convolution.

use pyroclass::explain::{cam_for_top_class, export_cam, export_overlay, CamLayer};
use pyroclass::synthetic::synthetic_samples;
use pyroclass::train::{train, DecayMode, TrainConfig};
use pyroclass::{build_model, ModelConfig, Task};

fn main() -> pyroclass::Result<()> {
    let task = Task::Poses;
    let set = synthetic_samples(task, 10, 16, 2)?;
    let config = ModelConfig::tiny(1, task)?.with_dense_width(32)?.with_dropout(0.0)?;
    let tc = TrainConfig {
        batch_size: 1,
        decay_mode: DecayMode::PerEpoch,
        max_epochs: 40,
        patience: 40,
        ..TrainConfig::for_classes(task.num_classes())
    };
    let (model, _) = train(build_model(&config, 2)?, &set, &set, &tc)?;

    let image = &set.images[1];
    let dir = std::env::temp_dir().join("pyroclass-grad-cam");
    std::fs::create_dir_all(&dir)?;
    for layer in [CamLayer::Head1x1, CamLayer::Last3x3] {
        let (class, score, map) = cam_for_top_class(&model, image, layer)?;
        println!("{layer:?}: predicted {} ({score:.3}), true {}", task.classes()[class], task.classes()[set.labels[1]]);
        let side = map.values.shape()[0];
        for row in map.values.data().chunks(side) {
            let line: String = row.iter().map(|&v| [' ', '.', ':', '*', '#'][((v * 4.99) as usize).min(4)]).collect();
            println!("  |{line}|");
        }
        let name = format!("{layer:?}").to_lowercase();
        export_cam(&map, &dir.join(format!("{name}.pgm")))?;
        export_overlay(image, &map, &dir.join(format!("{name}.png")))?;
    }
    println!("maps written to {}", dir.display());
    Ok(())
}
