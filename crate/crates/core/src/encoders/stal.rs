//! Spike Threshold Adaptive Learning encoder.
//!
//! Stacked: `X_f -> [dense, dropout, ReLU, batchnorm] x 2 -> align -> repeat(psi)
//! -> sigmoid(alpha * (h - phi))`. Vanilla feeds `X_f` straight into the repeat.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{collapse_weighted, init_thresholds, position_weights, SpikeTrain};
use crate::error::{Error, Result};
use crate::objective::{align_dims, align_dims_backward};
use crate::persist::{b64_array1, b64_array2, b64_vec};
use crate::rng::{derive_seed, Rng};

pub const STAL_FORMAT: &str = "spikeforge.stal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StalVariant {
    Stacked,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StalConfig {
    pub variant: StalVariant,
    /// Spike slots per (time, channel) cell.
    pub psi: usize,
    /// Sigmoid slope of the threshold surrogate.
    pub alpha: f64,
    /// Hidden width; `None` uses `omega * channels`.
    pub hidden: Option<usize>,
    pub dropout: f64,
    pub threshold_low: f64,
    pub threshold_high: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for StalConfig {
    fn default() -> Self {
        Self {
            variant: StalVariant::Stacked,
            psi: 5,
            alpha: 25.0,
            hidden: None,
            dropout: 0.5,
            threshold_low: 0.0,
            threshold_high: 1.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Dense layer followed by dropout, ReLU and batch normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    /// `out x in`
    #[serde(with = "b64_array2")]
    pub weight: Array2<f64>,
    #[serde(with = "b64_array1")]
    pub bias: Array1<f64>,
    #[serde(with = "b64_array1")]
    pub gamma: Array1<f64>,
    #[serde(with = "b64_array1")]
    pub beta: Array1<f64>,
    #[serde(with = "b64_array1")]
    pub running_mean: Array1<f64>,
    #[serde(with = "b64_array1")]
    pub running_var: Array1<f64>,
}

impl DenseBlock {
    fn new(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((n_out, n_in), |_| rng.uniform(-bound, bound)),
            bias: Array1::from_shape_fn(n_out, |_| rng.uniform(-bound, bound)),
            gamma: Array1::ones(n_out),
            beta: Array1::zeros(n_out),
            running_mean: Array1::zeros(n_out),
            running_var: Array1::ones(n_out),
        }
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalModel {
    pub variant: StalVariant,
    pub omega: usize,
    pub channels: usize,
    pub psi: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Seed the parameters were initialised from.
    pub seed: u64,
    /// Empty for the Vanilla variant.
    pub blocks: Vec<DenseBlock>,
    #[serde(with = "b64_array1")]
    pub thresholds: Array1<f64>,
    #[serde(with = "b64_vec")]
    pub position_weights: Vec<f64>,
}

struct BlockCache {
    input: Array2<f64>,
    /// dropout(dense(input)), before ReLU
    pre_relu: Array2<f64>,
    mask: Option<Array2<f64>>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Batch statistics were used (training-mode batchnorm).
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

/// Everything the loss and the backward pass need from one forward pass.
pub struct StalForward {
    /// `B x omega*c`
    pub x: Array2<f64>,
    /// Block outputs, `B x hidden` (the input itself for Vanilla).
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    /// Block outputs aligned to `omega*c`.
    pub z1_aligned: Array2<f64>,
    pub z2_aligned: Array2<f64>,
    /// Surrogate spikes, `B x omega*c*psi`.
    pub soft: Array2<f64>,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StalGrads {
    pub blocks: Vec<BlockGrads>,
    pub thresholds: Array1<f64>,
}

impl StalGrads {
    /// Same order as [`StalModel::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.weight.as_slice().expect("standard layout"));
            out.push(b.bias.as_slice().expect("standard layout"));
            out.push(b.gamma.as_slice().expect("standard layout"));
            out.push(b.beta.as_slice().expect("standard layout"));
        }
        out.push(self.thresholds.as_slice().expect("standard layout"));
        out
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl StalModel {
    pub fn new(cfg: &StalConfig, omega: usize, channels: usize, seed: u64) -> Result<Self> {
        if omega == 0 || channels == 0 {
            return Err(Error::arg("window shape must be non-empty"));
        }
        if cfg.psi == 0 {
            return Err(Error::arg("psi must be at least 1"));
        }
        if cfg.alpha <= 0.0 || !cfg.alpha.is_finite() {
            return Err(Error::arg("alpha must be positive"));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::arg("dropout must lie in [0, 1)"));
        }
        let width = omega * channels;
        let hidden = cfg.hidden.unwrap_or(width);
        if hidden == 0 {
            return Err(Error::arg("hidden width must be positive"));
        }
        let thresholds = init_thresholds(
            width * cfg.psi,
            cfg.threshold_low,
            cfg.threshold_high,
            derive_seed(seed, &[0]),
        )?;
        let blocks = match cfg.variant {
            StalVariant::Stacked => {
                let mut rng = Rng::new(derive_seed(seed, &[1]));
                vec![
                    DenseBlock::new(width, hidden, &mut rng),
                    DenseBlock::new(hidden, hidden, &mut rng),
                ]
            }
            StalVariant::Vanilla => Vec::new(),
        };
        Ok(Self {
            variant: cfg.variant,
            omega,
            channels,
            psi: cfg.psi,
            alpha: cfg.alpha,
            hidden,
            dropout: match cfg.variant {
                StalVariant::Stacked => cfg.dropout,
                StalVariant::Vanilla => 0.0,
            },
            bn_momentum: cfg.bn_momentum,
            bn_eps: cfg.bn_eps,
            seed,
            blocks,
            thresholds: Array1::from(thresholds),
            position_weights: position_weights(cfg.psi),
        })
    }

    /// `omega * channels`
    pub fn width(&self) -> usize {
        self.omega * self.channels
    }

    pub fn weight_sum(&self) -> f64 {
        self.position_weights.iter().sum()
    }

    pub fn n_params(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.weight.len() + 3 * b.bias.len())
            .sum::<usize>()
            + self.thresholds.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.weight.as_slice_mut().expect("standard layout"));
            out.push(b.bias.as_slice_mut().expect("standard layout"));
            out.push(b.gamma.as_slice_mut().expect("standard layout"));
            out.push(b.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.thresholds.as_slice_mut().expect("standard layout"));
        out
    }

    /// Check the structural invariants of a (possibly deserialised) model.
    pub fn validate(&self) -> Result<()> {
        let width = self.width();
        if self.thresholds.len() != width * self.psi {
            return Err(Error::shape(format!(
                "{} thresholds for omega*psi*c = {}",
                self.thresholds.len(),
                width * self.psi
            )));
        }
        if self.position_weights.len() != self.psi
            || self.position_weights[0] <= 0.0
            || self.position_weights.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Data(
                "position weights must be positive and strictly increasing".into(),
            ));
        }
        match self.variant {
            StalVariant::Vanilla if !self.blocks.is_empty() => {
                Err(Error::Data("Vanilla STAL carries no feature blocks".into()))
            }
            StalVariant::Stacked => {
                let expected = [(self.hidden, width), (self.hidden, self.hidden)];
                if self.blocks.len() != 2
                    || self
                        .blocks
                        .iter()
                        .zip(expected)
                        .any(|(b, shape)| b.weight.dim() != shape)
                {
                    return Err(Error::shape(
                        "feature block shapes do not match".to_string(),
                    ));
                }
                Ok(())
            }
            StalVariant::Vanilla => Ok(()),
        }
    }

    fn flatten_windows(&self, windows: &[&Array2<f64>]) -> Result<Array2<f64>> {
        let width = self.width();
        let mut x = Array2::zeros((windows.len(), width));
        for (mut row, w) in x.rows_mut().into_iter().zip(windows) {
            if w.dim() != (self.omega, self.channels) {
                return Err(Error::shape(format!(
                    "window {:?} does not match encoder {}x{}",
                    w.dim(),
                    self.omega,
                    self.channels
                )));
            }
            row.iter_mut().zip(w.iter()).for_each(|(d, &s)| *d = s);
        }
        Ok(x)
    }

    /// Forward pass over a batch of flattened windows (`B x omega*c`).
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode, rng: &mut Rng) -> Result<StalForward> {
        let width = self.width();
        if x.ncols() != width {
            return Err(Error::shape(format!(
                "input width {} != omega*c = {width}",
                x.ncols()
            )));
        }
        let x = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let (z1, z2) = match self.variant {
            StalVariant::Vanilla => (x.clone(), x.clone()),
            StalVariant::Stacked => {
                let (z1, c1) = self.block_forward(&self.blocks[0], x.clone(), mode, rng);
                let (z2, c2) = self.block_forward(&self.blocks[1], z1.clone(), mode, rng);
                caches.push(c1);
                caches.push(c2);
                (z1, z2)
            }
        };
        let align = |z: &Array2<f64>| -> Array2<f64> {
            if z.ncols() == width {
                return z.clone();
            }
            let mut out = Array2::zeros((z.nrows(), width));
            for (mut o, r) in out.rows_mut().into_iter().zip(z.rows()) {
                let a = align_dims(r.as_slice().expect("row-major"), width);
                o.iter_mut().zip(a).for_each(|(d, s)| *d = s);
            }
            out
        };
        let z1_aligned = align(&z1);
        let z2_aligned = align(&z2);

        let psi = self.psi;
        let alpha = self.alpha;
        let phi = self.thresholds.as_slice().expect("standard layout");
        let mut soft = Array2::zeros((x.nrows(), width * psi));
        for (mut s_row, h_row) in soft.rows_mut().into_iter().zip(z2_aligned.rows()) {
            let s_row = s_row.as_slice_mut().expect("row-major");
            for (cell, &h) in h_row.iter().enumerate() {
                for j in 0..psi {
                    let idx = cell * psi + j;
                    s_row[idx] = sigmoid(alpha * (h - phi[idx]));
                }
            }
        }
        Ok(StalForward {
            x,
            z1,
            z2,
            z1_aligned,
            z2_aligned,
            soft,
            blocks: caches,
        })
    }

    fn block_forward(
        &self,
        block: &DenseBlock,
        input: Array2<f64>,
        mode: Mode,
        rng: &mut Rng,
    ) -> (Array2<f64>, BlockCache) {
        let mut pre = input.dot(&block.weight.t());
        pre += &block.bias;
        let mask = if mode == Mode::Train && self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let m = Array2::from_shape_fn(pre.raw_dim(), |_| {
                if rng.bernoulli(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            pre *= &m;
            Some(m)
        } else {
            None
        };
        let relu = pre.mapv(|v| v.max(0.0));
        let n = relu.nrows();
        let eps = self.bn_eps;
        let (mean, var, batch_stats) = if mode == Mode::Train && n >= 2 {
            let mean = relu.mean_axis(Axis(0)).expect("non-empty batch");
            let var = relu.var_axis(Axis(0), 0.0);
            (mean.clone(), var.clone(), Some((mean, var)))
        } else {
            (block.running_mean.clone(), block.running_var.clone(), None)
        };
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (&relu - &mean) * &inv_std;
        let out = &xhat * &block.gamma + &block.beta;
        (
            out,
            BlockCache {
                input,
                pre_relu: pre,
                mask,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Fold the batch statistics of a training forward pass into the running estimates.
    pub fn update_running_stats(&mut self, fwd: &StalForward) {
        let m = self.bn_momentum;
        let n = fwd.x.nrows() as f64;
        for (block, cache) in self.blocks.iter_mut().zip(&fwd.blocks) {
            if let Some((mean, var)) = &cache.batch_stats {
                let unbiased = var * (n / (n - 1.0));
                block.running_mean = &block.running_mean * (1.0 - m) + mean * m;
                block.running_var = &block.running_var * (1.0 - m) + unbiased * m;
            }
        }
    }

    /// Back-propagate gradients w.r.t. the aligned block outputs and the
    /// surrogate spikes into parameter gradients.
    pub fn backward(
        &self,
        fwd: &StalForward,
        d_z1_aligned: &Array2<f64>,
        d_z2_aligned: &Array2<f64>,
        d_soft: &Array2<f64>,
    ) -> StalGrads {
        let psi = self.psi;
        let alpha = self.alpha;
        let width = self.width();
        let mut d_phi = Array1::<f64>::zeros(self.thresholds.len());
        let mut d_h = d_z2_aligned.clone();
        {
            let d_phi = d_phi.as_slice_mut().expect("standard layout");
            for ((s_row, ds_row), mut dh_row) in fwd
                .soft
                .rows()
                .into_iter()
                .zip(d_soft.rows())
                .zip(d_h.rows_mut())
            {
                for cell in 0..width {
                    let mut acc = 0.0;
                    for j in 0..psi {
                        let idx = cell * psi + j;
                        let s = s_row[idx];
                        let g = ds_row[idx] * alpha * s * (1.0 - s);
                        acc += g;
                        d_phi[idx] -= g;
                    }
                    dh_row[cell] += acc;
                }
            }
        }
        if self.variant == StalVariant::Vanilla {
            return StalGrads {
                blocks: Vec::new(),
                thresholds: d_phi,
            };
        }

        let unalign = |g: &Array2<f64>| -> Array2<f64> {
            if self.hidden == width {
                return g.clone();
            }
            let mut out = Array2::zeros((g.nrows(), self.hidden));
            for (mut o, r) in out.rows_mut().into_iter().zip(g.rows()) {
                let back = align_dims_backward(r.as_slice().expect("row-major"), self.hidden);
                o.iter_mut().zip(back).for_each(|(d, s)| *d = s);
            }
            out
        };
        let d_z2 = unalign(&d_h);
        let (g2, d_in2) = self.block_backward(&self.blocks[1], &fwd.blocks[1], d_z2);
        let d_z1 = unalign(d_z1_aligned) + d_in2;
        let (g1, _) = self.block_backward(&self.blocks[0], &fwd.blocks[0], d_z1);
        StalGrads {
            blocks: vec![g1, g2],
            thresholds: d_phi,
        }
    }

    fn block_backward(
        &self,
        block: &DenseBlock,
        cache: &BlockCache,
        d_out: Array2<f64>,
    ) -> (BlockGrads, Array2<f64>) {
        let d_gamma = (&d_out * &cache.xhat).sum_axis(Axis(0));
        let d_beta = d_out.sum_axis(Axis(0));
        let d_xhat = &d_out * &block.gamma;
        let mut d_relu = if cache.batch_stats.is_some() {
            let n = d_out.nrows() as f64;
            let sum_d = d_xhat.sum_axis(Axis(0));
            let sum_dx = (&d_xhat * &cache.xhat).sum_axis(Axis(0));
            let mut g = &d_xhat * n - &sum_d - &cache.xhat * &sum_dx;
            g *= &(&cache.inv_std / n);
            g
        } else {
            &d_xhat * &cache.inv_std
        };
        Zip::from(&mut d_relu)
            .and(&cache.pre_relu)
            .for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
        if let Some(mask) = &cache.mask {
            d_relu *= mask;
        }
        let d_pre = d_relu;
        let weight = d_pre.t().dot(&cache.input);
        let bias = d_pre.sum_axis(Axis(0));
        let d_input = d_pre.dot(&block.weight);
        (
            BlockGrads {
                weight,
                bias,
                gamma: d_gamma,
                beta: d_beta,
            },
            d_input,
        )
    }

    /// Hard spike trains (`B = 1[soft >= 0.5]`) for every row of a forward pass.
    pub fn spike_trains(&self, fwd: &StalForward) -> Vec<SpikeTrain> {
        fwd.soft
            .rows()
            .into_iter()
            .map(|row| {
                let soft: Vec<f64> = row.to_vec();
                let spikes: Vec<u8> = soft.iter().map(|&s| u8::from(s >= 0.5)).collect();
                let b_hat =
                    collapse_weighted(&spikes, &self.position_weights).expect("psi-aligned");
                SpikeTrain {
                    omega: self.omega,
                    psi: self.psi,
                    channels: self.channels,
                    spikes,
                    soft: Some(soft),
                    b_hat,
                }
            })
            .collect()
    }

    /// Encode one window. Training mode needs `rng` for dropout.
    pub fn encode_with(
        &self,
        window: &Array2<f64>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<SpikeTrain> {
        let x = self.flatten_windows(&[window])?;
        let fwd = self.forward(x.view(), mode, rng)?;
        Ok(self.spike_trains(&fwd).pop().expect("one row"))
    }

    /// Deterministic (evaluation-mode) encoding of one window.
    pub fn encode(&self, window: &Array2<f64>) -> Result<SpikeTrain> {
        self.encode_with(window, Mode::Eval, &mut Rng::new(0))
    }

    /// Evaluation-mode encoding of many windows, batched for throughput.
    pub fn encode_batch(&self, windows: &[&Array2<f64>]) -> Result<Vec<SpikeTrain>> {
        let mut out = Vec::with_capacity(windows.len());
        let mut rng = Rng::new(0);
        for chunk in windows.chunks(256) {
            let x = self.flatten_windows(chunk)?;
            let fwd = self.forward(x.view(), Mode::Eval, &mut rng)?;
            out.extend(self.spike_trains(&fwd));
        }
        Ok(out)
    }

    pub fn flatten(&self, windows: &[&Array2<f64>]) -> Result<Array2<f64>> {
        self.flatten_windows(windows)
    }
}
