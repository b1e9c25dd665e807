use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Model};
use crate::tensor::{Scalar, Tensor};

/// What the decay counter `t` counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    PerUpdate,
    PerEpoch,
}

impl std::str::FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-update" => Ok(DecayMode::PerUpdate),
            "per-epoch" => Ok(DecayMode::PerEpoch),
            other => Err(Error::InvalidConfig(format!(
                "unknown decay mode '{other}' (expected per-update or per-epoch)"
            ))),
        }
    }
}

/// Plain SGD with inverse-time decay: `lr(t) = base_lr / (1 + decay · t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub base_lr: f64,
    pub decay: f64,
    pub mode: DecayMode,
}

impl Sgd {
    pub fn new(base_lr: f64, decay: f64, mode: DecayMode) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {base_lr}")));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("decay must be non-negative, got {decay}")));
        }
        Ok(Self { base_lr, decay, mode })
    }

    pub fn lr(&self, t: u64) -> f64 {
        self.base_lr / (1.0 + self.decay * t as f64)
    }

    /// Decay counter for the given optimizer step and 0-based epoch.
    pub fn counter(&self, step: u64, epoch: u64) -> u64 {
        match self.mode {
            DecayMode::PerUpdate => step,
            DecayMode::PerEpoch => epoch,
        }
    }
}

/// `param ← param − lr · grad`.
pub fn sgd_step<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} does not match parameter {:?}",
            grad.shape(),
            param.shape()
        )));
    }
    let lr = T::of(lr);
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Apply one update to every parameter of `model` and advance its step.
pub fn apply_gradients<T: Scalar>(model: &mut Model<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
    let grads: Vec<&Tensor<T>> = grads.tensors().collect();
    let count = model.parameters().count();
    if grads.len() != count {
        return Err(Error::Shape(format!("{} gradients for {count} parameter tensors", grads.len())));
    }
    for (p, g) in model.parameters_mut().zip(grads) {
        sgd_step(p, g, lr)?;
    }
    model.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let sgd = Sgd::new(1e-4, 0.009, DecayMode::PerUpdate).unwrap();
        assert_eq!(sgd.lr(0), 1e-4);
        assert!((sgd.lr(1000) - 1e-5).abs() < 1e-18);
        assert!(sgd.lr(1) < sgd.lr(0));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0f32, -2.0, 3.0]).unwrap();
        let before = p.clone();
        sgd_step(&mut p, &Tensor::zeros(&[3]).unwrap(), 0.1).unwrap();
        assert_eq!(p, before);
        assert!(sgd_step(&mut p, &Tensor::zeros(&[2]).unwrap(), 0.1).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(Sgd::new(0.0, 0.0, DecayMode::PerUpdate).is_err());
        assert!(Sgd::new(1e-4, -1.0, DecayMode::PerUpdate).is_err());
    }
}
