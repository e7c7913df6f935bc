//! Spike-train encoders: the trainable STAL encoder and the rate / latency baselines.
//!
//! A spike train for an `omega x c` window has `psi` spike slots per
//! (time, channel) cell. Slots of one cell are stored contiguously:
//! flat index `(i * c + k) * psi + j` holds slot `j` of time `i`, channel `k`.
//! The same layout is used for the repeated feature vector `h` and the
//! threshold vector, so slot `j` of a cell always faces threshold
//! `phi[(i * c + k) * psi + j]`.

mod baseline;
pub(crate) mod stal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use baseline::{latency_encode, rate_encode};
pub use stal::{
    DenseBlock, Mode, StalConfig, StalForward, StalGrads, StalModel, StalVariant, STAL_FORMAT,
};

/// Hard spikes, optional surrogate activations, and the positional collapse.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    pub omega: usize,
    pub psi: usize,
    pub channels: usize,
    /// `{0,1}` spikes, length `omega * channels * psi`.
    pub spikes: Vec<u8>,
    /// Surrogate activations in (0,1) when produced by STAL.
    pub soft: Option<Vec<f64>>,
    /// Weighted slot sums, length `omega * channels`.
    pub b_hat: Vec<f64>,
}

impl SpikeTrain {
    pub fn from_spikes(
        omega: usize,
        psi: usize,
        channels: usize,
        spikes: Vec<u8>,
        weights: &[f64],
    ) -> Result<Self> {
        if spikes.len() != omega * psi * channels {
            return Err(Error::shape(format!(
                "{} spikes for a {omega}x{psi}x{channels} train",
                spikes.len()
            )));
        }
        let b_hat = collapse_weighted(&spikes, weights)?;
        Ok(Self {
            omega,
            psi,
            channels,
            spikes,
            soft: None,
            b_hat,
        })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.spikes[(i * self.channels + k) * self.psi + j]
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.iter().map(|&s| s as usize).sum()
    }

    pub fn slots(&self) -> usize {
        self.spikes.len()
    }

    pub fn density(&self) -> f64 {
        self.spike_count() as f64 / self.slots() as f64
    }

    /// `b_hat / sum(p)`, in [0, 1].
    pub fn b_hat_scaled(&self, weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        self.b_hat.iter().map(|v| v / total).collect()
    }
}

/// Binary positional weights `p_j = 2^j` (0-based): any slot pattern maps to a distinct sum.
pub fn position_weights(psi: usize) -> Vec<f64> {
    (0..psi).map(|j| (1u64 << j) as f64).collect()
}

/// Repeat every element `psi` times consecutively.
pub fn repeat_expand(z: &[f64], psi: usize) -> Vec<f64> {
    z.iter()
        .flat_map(|&v| std::iter::repeat(v).take(psi))
        .collect()
}

/// `b_hat[cell] = sum_j p_j * B[cell, j]` over a slot-contiguous tensor.
pub fn collapse_weighted<T: Copy + Into<f64>>(b: &[T], weights: &[f64]) -> Result<Vec<f64>> {
    let psi = weights.len();
    if psi == 0 || b.len() % psi != 0 {
        return Err(Error::shape(format!(
            "{} entries cannot be split into cells of {psi} slots",
            b.len()
        )));
    }
    Ok(b.chunks_exact(psi)
        .map(|cell| cell.iter().zip(weights).map(|(&s, &p)| s.into() * p).sum())
        .collect())
}

/// `n` independent draws from `U(a, b)`.
pub fn init_thresholds(n: usize, a: f64, b: f64, seed: u64) -> Result<Vec<f64>> {
    if b <= a || a.is_nan() || b.is_nan() {
        return Err(Error::arg(format!("threshold range [{a}, {b}) is empty")));
    }
    let mut rng = Rng::new(seed);
    Ok((0..n).map(|_| rng.uniform(a, b)).collect())
}

/// Encoders selectable for a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    StalStacked,
    StalVanilla,
    Rate,
    Latency,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::Rate,
        EncoderKind::Latency,
        EncoderKind::StalStacked,
        EncoderKind::StalVanilla,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::StalStacked => "stal-stacked",
            EncoderKind::StalVanilla => "stal-vanilla",
            EncoderKind::Rate => "rate",
            EncoderKind::Latency => "latency",
        }
    }

    pub fn is_stal(self) -> bool {
        matches!(self, EncoderKind::StalStacked | EncoderKind::StalVanilla)
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown encoder {s:?}")))
    }
}
