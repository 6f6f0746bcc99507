use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{batch_gradient, decay_mask, eval_logits, Mode};
use super::model::{BatchNorm, ModelState};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Factor applied to the final training LR for the single fine-tuning epoch.
pub const FINE_TUNE_DECAY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// L2 penalty on linear weights (not biases, not BN parameters).
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            learning_rate: 0.1,
            lr_decay: 0.95,
            weight_decay: 1e-4,
            momentum: 0.0,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Learning rate used during the last training epoch.
    pub fn last_epoch_lr(&self) -> f64 {
        if self.epochs == 0 {
            return self.learning_rate;
        }
        self.learning_rate * self.lr_decay.powi(self.epochs as i32 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub last_lr: f64,
    pub samples_seen: usize,
}

fn batches(order: &[usize], batch_size: usize, need_two: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    // BN cannot normalize a single row; fold a trailing singleton into its neighbour.
    if need_two && out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = order.len() - batch_size - 1;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

fn update_running_stats(model: &mut ModelState, stats: Vec<Option<(Array1<f64>, Array1<f64>)>>, n: usize) {
    let unbias = n as f64 / (n as f64 - 1.0);
    let m = BatchNorm::MOMENTUM;
    for (layer, stat) in model.hidden.iter_mut().zip(stats) {
        if let (Some(bn), Some((mean, var))) = (&mut layer.bn, stat) {
            bn.running_mean.zip_mut_with(&mean, |r, &b| *r = (1.0 - m) * *r + m * b);
            bn.running_var
                .zip_mut_with(&var, |r, &b| *r = (1.0 - m) * *r + m * b * unbias);
        }
    }
}

/// Mini-batch SGD. `observer` sees the row ids of every batch before it is used.
pub fn train_observed(
    model: &ModelState,
    data: &TabularDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&[usize]),
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_labels(model.spec.num_classes)?;
    let mut out = model.clone();
    let mut report = TrainReport {
        last_lr: cfg.learning_rate,
        ..Default::default()
    };
    if cfg.epochs == 0 {
        return Ok((out, report));
    }
    let n = data.len();
    if model.spec.batch_norm && n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mask = decay_mask(model);
    let mut velocity = vec![0.0; model.param_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = cfg.learning_rate;
    let mut ids = Vec::with_capacity(cfg.batch_size + 1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, idx) in batches(&order, cfg.batch_size, model.spec.batch_norm)
            .into_iter()
            .enumerate()
        {
            ids.clear();
            ids.extend(idx.iter().map(|&i| data.row_ids[i]));
            observer(&ids);
            let x = data.features.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let bg = batch_gradient(&out, x.view(), &y, Mode::Train)?;
            if !bg.mean_loss.is_finite() || bg.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += bg.mean_loss * idx.len() as f64;
            report.samples_seen += idx.len();

            let mut offset = 0;
            for slice in out.slices_mut() {
                for (j, p) in slice.iter_mut().enumerate() {
                    let i = offset + j;
                    let mut g = bg.grad[i];
                    if mask[i] {
                        g += cfg.weight_decay * *p;
                    }
                    velocity[i] = cfg.momentum * velocity[i] + g;
                    *p -= lr * velocity[i];
                }
                offset += slice.len();
            }
            update_running_stats(&mut out, bg.batch_stats, idx.len());
        }
        report.epoch_losses.push(epoch_loss / n as f64);
        report.last_lr = lr;
        log::debug!("epoch {epoch}: loss {:.5} lr {lr:.5}", epoch_loss / n as f64);
        lr *= cfg.lr_decay;
    }
    Ok((out, report))
}

pub fn train_with_report(
    model: &ModelState,
    data: &TabularDataset,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    train_observed(model, data, cfg, &mut |_| {})
}

pub fn train(model: &ModelState, data: &TabularDataset, cfg: &TrainConfig) -> Result<ModelState> {
    train_with_report(model, data, cfg).map(|(m, _)| m)
}

/// One extra SGD epoch at `last_lr * 0.95`, momentum reset. Batch size,
/// weight decay and shuffle seed come from `cfg`.
pub fn fine_tune(model: &ModelState, data: &TabularDataset, last_lr: f64, cfg: &TrainConfig) -> Result<ModelState> {
    let ft = fine_tune_config(last_lr, cfg);
    train(model, data, &ft)
}

pub fn fine_tune_config(last_lr: f64, cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        learning_rate: last_lr * FINE_TUNE_DECAY,
        ..cfg.clone()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &ModelState, data: &TabularDataset, exec: Execution) -> Result<Vec<usize>> {
    let logits = eval_logits(model, data.features.view(), exec)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("contiguous")))
        .collect())
}

pub fn evaluate_accuracy(model: &ModelState, data: &TabularDataset) -> Result<f64> {
    evaluate_accuracy_with(model, data, Execution::default())
}

pub fn evaluate_accuracy_with(model: &ModelState, data: &TabularDataset, exec: Execution) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = predict(model, data, exec)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}
