use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::loss::stal_loss;
use super::mi::MiEstimatorConfig;
use crate::data::{Modality, WindowSet};
use crate::encoders::{Mode, StalGrads, StalModel};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::Rng;

/// Minibatch size per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSizes {
    #[serde(rename = "sEMG")]
    pub semg: usize,
    #[serde(rename = "Angle")]
    pub angle: usize,
    #[serde(rename = "Energy")]
    pub energy: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        Self {
            semg: 32,
            angle: 16,
            energy: 8,
        }
    }
}

impl BatchSizes {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Semg => self.semg,
            Modality::Angle => self.angle,
            Modality::Energy => self.energy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StalTrainConfig {
    /// Sparsity strength.
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub batch_size: BatchSizes,
    pub mi: MiEstimatorConfig,
}

impl Default for StalTrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr: 5.0e-3,
            weight_decay: 1e-2,
            epochs: 30,
            early_stop_patience: 5,
            min_delta: 1e-4,
            batch_size: BatchSizes::default(),
            mi: MiEstimatorConfig::default(),
        }
    }
}

impl StalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.lr < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::arg(
                "lambda, lr and weight decay must be non-negative",
            ));
        }
        if self.batch_size.semg == 0 || self.batch_size.angle == 0 || self.batch_size.energy == 0 {
            return Err(Error::arg("batch sizes must be positive"));
        }
        self.mi.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_mi: f64,
    pub l_s: f64,
    pub total: f64,
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,L_MI,L_S,total\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.l_mi, e.l_s, e.total));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Mean encoder objective over a batch and its parameter gradients.
pub struct BatchObjective {
    pub l_mi: f64,
    pub l_s: f64,
    pub total: f64,
    pub grads: StalGrads,
}

/// Forward, loss and backward for one batch of flattened windows.
///
/// Returns the forward pass too, so training can fold its batch statistics
/// into the running estimates.
pub fn stal_objective(
    model: &StalModel,
    x: ArrayView2<f64>,
    mode: Mode,
    lambda: f64,
    mi: &MiEstimatorConfig,
    rng: &mut Rng,
) -> Result<(BatchObjective, crate::encoders::StalForward)> {
    let fwd = model.forward(x, mode, rng)?;
    let n = fwd.x.nrows();
    let width = model.width();
    let psi = model.psi;
    let weight_sum = model.weight_sum();
    let mut d_z1 = Array2::zeros((n, width));
    let mut d_z2 = Array2::zeros((n, width));
    let mut d_soft = Array2::zeros((n, width * psi));
    let (mut l_mi, mut l_s) = (0.0, 0.0);
    let scale = 1.0 / n as f64;
    for b in 0..n {
        let soft = fwd.soft.row(b);
        let soft = soft.as_slice().expect("row-major");
        let b_hat: Vec<f64> = soft
            .chunks_exact(psi)
            .map(|cell| {
                cell.iter()
                    .zip(&model.position_weights)
                    .map(|(s, p)| s * p)
                    .sum()
            })
            .collect();
        let x_row = fwd.x.row(b);
        let z1 = fwd.z1_aligned.row(b);
        let z2 = fwd.z2_aligned.row(b);
        let loss = stal_loss(
            x_row.as_slice().expect("row-major"),
            z1.as_slice().expect("row-major"),
            z2.as_slice().expect("row-major"),
            &b_hat,
            lambda,
            weight_sum,
            mi,
        )?;
        l_mi += loss.mi * scale;
        l_s += loss.sparsity * scale;
        d_z1.row_mut(b)
            .iter_mut()
            .zip(&loss.d_z1)
            .for_each(|(d, g)| *d = g * scale);
        d_z2.row_mut(b)
            .iter_mut()
            .zip(&loss.d_z2)
            .for_each(|(d, g)| *d = g * scale);
        let mut ds = d_soft.row_mut(b);
        let ds = ds.as_slice_mut().expect("row-major");
        for (cell, g) in loss.d_b_hat.iter().enumerate() {
            for (j, p) in model.position_weights.iter().enumerate() {
                ds[cell * psi + j] = g * p * scale;
            }
        }
    }
    let grads = model.backward(&fwd, &d_z1, &d_z2, &d_soft);
    Ok((
        BatchObjective {
            l_mi,
            l_s,
            total: l_mi + l_s,
            grads,
        },
        fwd,
    ))
}

/// Train on the windows of one modality; the batch size is picked by modality.
pub fn train_stal(
    model: StalModel,
    windows: &WindowSet,
    cfg: &StalTrainConfig,
    seed: u64,
) -> Result<(StalModel, LossHistory)> {
    let first = windows
        .windows
        .first()
        .ok_or_else(|| Error::arg("cannot train an encoder on an empty window set"))?;
    let modality = first.modality;
    if windows.windows.iter().any(|w| w.modality != modality) {
        return Err(Error::arg(
            "encoder training windows must share one modality",
        ));
    }
    let data: Vec<&Array2<f64>> = windows.windows.iter().map(|w| &w.data).collect();
    train_stal_on(model, &data, cfg, cfg.batch_size.get(modality), seed)
}

/// Unsupervised AdamW training with early stopping on the epoch loss;
/// returns the best-loss parameters.
pub fn train_stal_on(
    mut model: StalModel,
    windows: &[&Array2<f64>],
    cfg: &StalTrainConfig,
    batch_size: usize,
    seed: u64,
) -> Result<(StalModel, LossHistory)> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::arg("cannot train an encoder on an empty window set"));
    }
    if batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let x_all = model.flatten(windows)?;
    let mut rng = Rng::new(seed);
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut history = LossHistory::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut l_mi, mut l_s) = (0.0, 0.0);
        for batch in order.chunks(batch_size) {
            let x = x_all.select(ndarray::Axis(0), batch);
            let (obj, fwd) =
                stal_objective(&model, x.view(), Mode::Train, cfg.lambda, &cfg.mi, &mut rng)?;
            let w = batch.len() as f64 / windows.len() as f64;
            l_mi += obj.l_mi * w;
            l_s += obj.l_s * w;
            model.update_running_stats(&fwd);
            opt.step(model.params_mut(), obj.grads.slices());
        }
        let total = l_mi + l_s;
        history.epochs.push(EpochLoss {
            epoch,
            l_mi,
            l_s,
            total,
        });
        log::debug!("stal epoch {epoch}: L_MI={l_mi:.5} L_S={l_s:.5}");
        if total < best.0 - cfg.min_delta {
            best = (total, model.clone());
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
