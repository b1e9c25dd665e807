//! Compare backpropagated gradients of a narrow tiny network with central
//! finite differences of the loss, computed in 64-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pyroclass::train::{loss_and_logit_grad, LossKind};
use pyroclass::{build_model, Model, ModelConfig, Task, Tensor};

fn loss(model: &Model<f64>, batch: &Tensor<f64>, labels: &[usize]) -> pyroclass::Result<f64> {
    let probs = model.predict(batch)?;
    Ok(loss_and_logit_grad(LossKind::Categorical, &probs, labels)?.0)
}

fn main() -> pyroclass::Result<()> {
    let config = ModelConfig::tiny(1, Task::Poses)?.with_width_divisor(8)?;
    let model: Model<f64> = build_model(&config, 3)?.cast();
    let s = config.input_size;
    let pixels: Vec<f64> = (0..2 * s * s).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
    let batch = Tensor::new(vec![2, 1, s, s], pixels)?;
    let labels = [0, 2];

    // Inference mode leaves dropout out so the loss is deterministic.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (probs, trace) = model.forward_traced(&batch, false, &mut rng, None)?;
    let (_, grad_logits) = loss_and_logit_grad(LossKind::Categorical, &probs, &labels)?;
    let grads = model.backward(&trace, &grad_logits)?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (t, g) in grads.tensors().enumerate() {
        for i in (0..g.len()).step_by(7) {
            let mut probe = model.clone();
            probe.parameters_mut().nth(t).expect("tensor").data_mut()[i] += h;
            let up = loss(&probe, &batch, &labels)?;
            probe.parameters_mut().nth(t).expect("tensor").data_mut()[i] -= 2.0 * h;
            let down = loss(&probe, &batch, &labels)?;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    println!("{} parameters, {checked} probed, worst relative error {worst:.2e}", config.param_count());
    Ok(())
}
