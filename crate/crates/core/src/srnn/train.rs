use std::path::Path;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{argmax, Firing, SrnnModel};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::objective::BatchSizes;
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrnnTrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub batch_size: BatchSizes,
}

impl Default for SrnnTrainConfig {
    fn default() -> Self {
        Self {
            lr: 7.5e-4,
            weight_decay: 1e-2,
            epochs: 25,
            early_stop_patience: 5,
            min_delta: 1e-4,
            batch_size: BatchSizes::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrnnEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SrnnHistory {
    pub epochs: Vec<SrnnEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl SrnnHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_acc\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.train_acc));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One epoch of minority-oversampled batches: `ceil(N / batch_size)` batches
/// of `batch_size` indices drawn with replacement, each sample weighted by
/// the inverse frequency of its class.
pub fn make_batches(labels: &[Label], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::arg("oversampling needs both classes present"));
    }
    let mut cumulative = Vec::with_capacity(labels.len());
    let mut acc = 0.0;
    for &y in labels {
        acc += 1.0 / if y == 1 { n_pos } else { n_neg } as f64;
        cumulative.push(acc);
    }
    let mut rng = Rng::new(seed);
    let n_batches = labels.len().div_ceil(batch_size);
    Ok((0..n_batches)
        .map(|_| {
            (0..batch_size)
                .map(|_| rng.weighted_index(&cumulative))
                .collect()
        })
        .collect())
}

/// Supervised BPTT training on scaled `b_hat` inputs; returns the
/// best-epoch parameters.
pub fn train_srnn(
    mut model: SrnnModel,
    inputs: &[&[f64]],
    labels: &[Label],
    cfg: &SrnnTrainConfig,
    batch_size: usize,
    seed: u64,
) -> Result<(SrnnModel, SrnnHistory)> {
    if inputs.is_empty() {
        return Err(Error::arg("cannot train a classifier on no samples"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::shape("one label per input required"));
    }
    if cfg.lr < 0.0 || cfg.weight_decay < 0.0 {
        return Err(Error::arg(
            "learning rate and weight decay must be non-negative",
        ));
    }
    let x_all = model.prepare(inputs)?;
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut history = SrnnHistory::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(
            labels,
            batch_size,
            crate::rng::derive_seed(seed, &[epoch as u64]),
        )?;
        let (mut loss, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in &batches {
            let x = x_all.select(Axis(0), batch);
            let y: Vec<Label> = batch.iter().map(|&i| labels[i]).collect();
            let (l, grads, logits) = model.loss_and_grads(x.view(), &y, Firing::Hard)?;
            loss += l / batches.len() as f64;
            correct += logits
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(row, &t)| argmax(row.view()) == t)
                .count();
            seen += y.len();
            opt.step(model.params_mut(), grads.slices());
        }
        let train_acc = correct as f64 / seen as f64;
        history.epochs.push(SrnnEpoch {
            epoch,
            loss,
            train_acc,
        });
        log::debug!("srnn epoch {epoch}: loss={loss:.5} acc={train_acc:.3}");
        if loss < best.0 - cfg.min_delta {
            best = (loss, model.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.1, history))
}
