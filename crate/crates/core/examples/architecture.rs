//! Print the layer stack of each network depth and check that the flatten
//! width stays at 25088 from depth 1 to 5.

use pyroclass::model::head_channels;
use pyroclass::{ModelConfig, Task};

fn main() -> pyroclass::Result<()> {
    let config = ModelConfig::new(1, Task::Objects)?;
    println!("depth 1, objects task:");
    for spec in config.layer_specs() {
        let params = spec.param_count();
        if params > 0 {
            println!("  {spec:<24} {params:>12}");
        } else {
            println!("  {spec}");
        }
    }
    println!("  total parameters {:>18}\n", config.param_count());

    println!("depth  head  feature map  flatten  params (objects / poses / fire)");
    for depth in 1..=5 {
        let c = ModelConfig::new(depth, Task::Objects)?;
        let counts: Vec<String> = [Task::Objects, Task::Poses, Task::Fire]
            .iter()
            .map(|&t| ModelConfig::new(depth, t).map(|c| c.param_count().to_string()))
            .collect::<pyroclass::Result<_>>()?;
        println!(
            "{depth:>5}  {:>4}  {:>4}×{:<4}    {:>7}  {}",
            head_channels(depth)?,
            c.feature_side(),
            c.feature_side(),
            c.flatten_size(),
            counts.join(" / ")
        );
    }

    let tiny = ModelConfig::tiny(2, Task::Fire)?;
    println!("\ntiny depth-2 fire variant: {} parameters", tiny.param_count());
    Ok(())
}
