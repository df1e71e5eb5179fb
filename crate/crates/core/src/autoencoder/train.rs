use serde::{Deserialize, Serialize};

use super::{normalize_window, CaeModel, Gradients, Tensor};
use crate::error::{invalid, DacError, Result};
use crate::seed::derive_seed;
use crate::signal_sim::{shuffle, Dataset, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Caps the number of training windows visited per epoch. `None` visits
    /// the whole training set. The same cap bounds how many windows of each
    /// set are used to report losses, taken in stored order.
    #[serde(default)]
    pub max_windows_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            early_stop_patience: 5,
            max_windows_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return invalid("epochs and batch_size must be at least 1");
        }
        // Zero is allowed: it freezes the weights, which tests rely on.
        if !(self.learning_rate >= 0.0 && self.learning_rate < 1.0) {
            return invalid(format!("learning_rate must lie in [0, 1), got {}", self.learning_rate));
        }
        if self.max_windows_per_epoch == Some(0) {
            return invalid("max_windows_per_epoch must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    pub initial_validation_loss: f64,
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose weights were kept; 0 means the initial weights.
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub final_validation_loss: f64,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(model: &mut CaeModel, grads: &Gradients, cfg: &TrainConfig, adam: &mut Adam) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (layer, g) in model.layers_mut().zip(&grads.layers) {
                for (p, d) in layer.weight.iter_mut().zip(&g.weight) {
                    *p -= lr * d;
                }
                for (p, d) in layer.bias.iter_mut().zip(&g.bias) {
                    *p -= lr * d;
                }
            }
        }
        Optimizer::Adam => {
            adam.step += 1;
            let c1 = 1.0 - BETA1.powi(adam.step);
            let c2 = 1.0 - BETA2.powi(adam.step);
            let mut k = 0;
            for (layer, g) in model.layers_mut().zip(&grads.layers) {
                let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
                for (p, &d) in params.zip(g.weight.iter().chain(&g.bias)) {
                    adam.m[k] = BETA1 * adam.m[k] + (1.0 - BETA1) * d;
                    adam.v[k] = BETA2 * adam.v[k] + (1.0 - BETA2) * d * d;
                    let m_hat = adam.m[k] / c1;
                    let v_hat = adam.v[k] / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    k += 1;
                }
            }
        }
    }
}

fn normalized(windows: &[Window], window_len: usize) -> Result<Vec<Tensor>> {
    windows.iter().map(|w| normalize_window(&w.data, window_len)).collect()
}

fn mean_loss(model: &CaeModel, xs: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for x in xs {
        total += model.loss(x)?;
    }
    Ok(total / xs.len() as f64)
}

/// Minimizes mean reconstruction error over `data.train` by mini-batch
/// gradient descent on per-window normalized inputs.
///
/// Validation loss (training loss when the validation set is empty) is
/// measured after every epoch; the best weights seen, including the initial
/// ones, are restored at the end and rounded to `f32`. Training stops once
/// `early_stop_patience` consecutive epochs fail to improve.
pub fn train(model: &mut CaeModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() {
        return invalid("training set is empty");
    }
    if data.window_len != model.window_len() {
        return invalid(format!(
            "dataset window_len {} does not match model input {}",
            data.window_len,
            model.window_len()
        ));
    }
    let w = model.window_len();
    let cap = cfg.max_windows_per_epoch.unwrap_or(usize::MAX);
    let train_probe = normalized(&data.train[..cap.min(data.train.len())], w)?;
    let val_x = if data.validation.is_empty() {
        None
    } else {
        Some(normalized(&data.validation[..cap.min(data.validation.len())], w)?)
    };
    let monitor = |m: &CaeModel| mean_loss(m, val_x.as_deref().unwrap_or(&train_probe));

    let initial_train_loss = mean_loss(model, &train_probe)?;
    let initial_validation_loss = monitor(model)?;
    if !initial_validation_loss.is_finite() {
        return Err(DacError::TrainingDiverged { epoch: 0 });
    }

    let mut adam = Adam {
        m: vec![0.0; model.parameter_count()],
        v: vec![0.0; model.parameter_count()],
        step: 0,
    };
    let mut best = (initial_validation_loss, 0usize, model.parameters());
    let mut since_best = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let per_epoch = cap.min(data.train.len());

    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, derive_seed(cfg.seed, &[0x7EA1, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order[..per_epoch].chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(model);
            for &i in batch {
                let x = normalize_window(&data.train[i].data, w)?;
                loss_sum += model.accumulate_gradient(&x, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            apply_update(model, &grads, cfg, &mut adam);
        }
        let train_loss = loss_sum / per_epoch as f64;
        let validation_loss = monitor(model)?;
        if !train_loss.is_finite() || !validation_loss.is_finite() {
            return Err(DacError::TrainingDiverged { epoch });
        }
        epochs.push(EpochLoss {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best.0 {
            best = (validation_loss, epoch, model.parameters());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience.max(1) && epoch < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    model.set_parameters(&best.2)?;
    model.round_to_f32();
    Ok(TrainReport {
        initial_train_loss,
        initial_validation_loss,
        epochs,
        best_epoch: best.1,
        final_train_loss: mean_loss(model, &train_probe)?,
        final_validation_loss: monitor(model)?,
        stopped_early,
    })
}
