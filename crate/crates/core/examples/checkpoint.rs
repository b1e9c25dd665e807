//! Save a model, read its header back without loading the weights, and
//! confirm the reload is bit-exact.

use pyroclass::train::checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint};
use pyroclass::{build_model, ModelConfig, Task};

fn main() -> pyroclass::Result<()> {
    let config = ModelConfig::tiny(3, Task::Fire)?;
    let model = build_model(&config, 42)?;
    let path = std::env::temp_dir().join("pyroclass-example.ckpt");
    save_checkpoint(&model, &path)?;
    println!("{} bytes written to {}", std::fs::metadata(&path)?.len(), path.display());

    let header = read_checkpoint_header(&path)?;
    println!(
        "header: depth {}, task {}, seed {}, step {}, {} parameters in {} tensors",
        header.config.depth,
        header.config.task,
        header.seed,
        header.step,
        header.param_count,
        header.shapes.len()
    );

    let back = load_checkpoint(&path)?;
    let exact = model
        .parameters()
        .zip(back.parameters())
        .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!("reloaded parameters bit-identical: {exact}");

    let full = ModelConfig::new(1, Task::Objects)?;
    println!("a full depth-1 objects checkpoint would hold {} parameters", full.param_count());
    Ok(())
}
