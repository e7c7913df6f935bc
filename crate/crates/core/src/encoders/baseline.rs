use ndarray::Array2;

use super::{position_weights, SpikeTrain};
use crate::error::{Error, Result};
use crate::rng::Rng;

fn check_unit_range(window: &Array2<f64>) -> Result<()> {
    match window.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::arg(format!("value {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Every slot fires independently with probability equal to the cell value.
pub fn rate_encode(window: &Array2<f64>, psi: usize, seed: u64) -> Result<SpikeTrain> {
    if psi == 0 {
        return Err(Error::arg("psi must be at least 1"));
    }
    check_unit_range(window)?;
    let (omega, c) = window.dim();
    let mut rng = Rng::new(seed);
    let mut spikes = Vec::with_capacity(omega * c * psi);
    for &x in window.iter() {
        for _ in 0..psi {
            spikes.push(u8::from(rng.bernoulli(x)));
        }
    }
    SpikeTrain::from_spikes(omega, psi, c, spikes, &position_weights(psi))
}

/// One spike per cell; larger values fire earlier: slot `round((1 - x) * (psi - 1))`.
pub fn latency_encode(window: &Array2<f64>, psi: usize) -> Result<SpikeTrain> {
    if psi == 0 {
        return Err(Error::arg("psi must be at least 1"));
    }
    check_unit_range(window)?;
    let (omega, c) = window.dim();
    let mut spikes = vec![0u8; omega * c * psi];
    for (cell, &x) in window.iter().enumerate() {
        let slot = ((1.0 - x) * (psi - 1) as f64).round() as usize;
        spikes[cell * psi + slot.min(psi - 1)] = 1;
    }
    SpikeTrain::from_spikes(omega, psi, c, spikes, &position_weights(psi))
}
