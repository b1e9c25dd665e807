//! Mini-batch SGD training with early stopping, k-fold cross-validation
//! and checkpoint persistence.

pub mod checkpoint;
pub mod crossval;
pub mod loss;
pub mod sgd;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use crossval::{cross_validate, CrossValReport, FoldResult};
pub use loss::{binary_cross_entropy, categorical_cross_entropy, loss_and_logit_grad, one_hot, LossKind};
pub use sgd::{apply_gradients, sgd_step, DecayMode, Sgd};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            decay: 0.009,
            decay_mode: DecayMode::PerUpdate,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            min_delta: 1e-4,
            loss: LossKind::Categorical,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the loss matching the class count: binary for two
    /// classes, categorical otherwise.
    pub fn for_classes(num_classes: usize) -> Self {
        Self {
            loss: if num_classes == 2 { LossKind::Binary } else { LossKind::Categorical },
            ..Self::default()
        }
    }

    pub fn sgd(&self) -> Result<Sgd> {
        Sgd::new(self.base_lr, self.decay, self.decay_mode)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        self.sgd()?;
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig(
                "patience, batch size and max epochs must be at least 1".into(),
            ));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("min delta must be non-negative, got {}", self.min_delta)));
        }
        let binary = self.loss == LossKind::Binary;
        if binary != (num_classes == 2) {
            return Err(Error::InvalidConfig(format!(
                "binary loss is used exactly when there are 2 classes; got {:?} loss with {num_classes} classes",
                self.loss
            )));
        }
        Ok(())
    }
}

/// Per-epoch history; epochs are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has failed to improve on the best value by
/// at least `min_delta` for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            waited: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best - self.min_delta || self.best_epoch == 0 {
            self.best = loss;
            self.best_epoch = epoch;
            self.waited = 0;
            StopDecision::Improved
        } else {
            self.waited += 1;
            if self.waited >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Inference-mode scores `[N, K]` for every sample, in batches.
pub fn predict_samples(model: &Model<f32>, samples: &Samples, batch_size: usize) -> Result<Tensor<f32>> {
    let k = model.config.num_classes;
    let mut data = Vec::with_capacity(samples.len() * k);
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (batch, _) = samples.batch(chunk)?;
        data.extend_from_slice(model.predict(&batch)?.data());
    }
    Tensor::new(vec![samples.len(), k], data)
}

/// Loss and accuracy of inference-mode predictions.
pub fn evaluate_loss(model: &Model<f32>, samples: &Samples, loss: LossKind, batch_size: usize) -> Result<(f64, f64)> {
    let scores = predict_samples(model, samples, batch_size)?;
    let (l, _) = loss_and_logit_grad(loss, &scores, &samples.labels)?;
    Ok((l, accuracy_of(&scores, &samples.labels)))
}

pub fn accuracy_of(scores: &Tensor<f32>, labels: &[usize]) -> f64 {
    let k = scores.shape()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(&scores.data()[i * k..(i + 1) * k]) == l)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Train `model` on `train_set`, monitoring `val_set` after each epoch, and
/// return the parameters of the epoch with the lowest validation loss.
pub fn train(
    mut model: Model<f32>,
    train_set: &Samples,
    val_set: &Samples,
    config: &TrainConfig,
) -> Result<(Model<f32>, TrainReport)> {
    config.validate(model.config.num_classes)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    for s in [train_set, val_set] {
        if s.num_classes != model.config.num_classes {
            return Err(Error::InvalidInput(format!(
                "samples have {} classes, model has {}",
                s.num_classes, model.config.num_classes
            )));
        }
    }
    let sgd = config.sgd()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = model.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_acc: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
        seed: config.seed,
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (batch, labels) = train_set.batch(chunk)?;
            let (scores, trace) = model.forward_traced(&batch, true, &mut rng, None)?;
            let (loss, grad) = loss_and_logit_grad(config.loss, &scores, &labels)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * chunk.len() as f64;
            let grads = model.backward(&trace, &grad)?;
            let lr = sgd.lr(sgd.counter(model.step, epoch as u64 - 1));
            apply_gradients(&mut model, &grads, lr)?;
        }
        let train_loss = total / train_set.len() as f64;
        let (val_loss, val_acc) = evaluate_loss(&model, val_set, config.loss, config.batch_size)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        log::info!("epoch {epoch}: train loss {train_loss:.6}, val loss {val_loss:.6}, val acc {val_acc:.4}");
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.val_acc.push(val_acc);
        report.stopped_epoch = epoch;
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    report.best_epoch = stopper.best_epoch();
    Ok((best, report))
}
