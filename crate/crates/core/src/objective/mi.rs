//! Differentiable soft-histogram mutual information.
//!
//! Each value in [0, 1] is spread over `n_bins` uniform bins with normalised
//! Gaussian kernel weights. The joint distribution is the average outer
//! product of the two soft assignments, so it is a proper joint distribution
//! whose marginals are the soft histograms of `x` and `y`.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiEstimatorConfig {
    pub n_bins: usize,
    /// Kernel standard deviation; `None` uses the bin width.
    pub soft_bandwidth: Option<f64>,
}

impl Default for MiEstimatorConfig {
    fn default() -> Self {
        Self {
            n_bins: 16,
            soft_bandwidth: None,
        }
    }
}

impl MiEstimatorConfig {
    pub fn bandwidth(&self) -> f64 {
        self.soft_bandwidth.unwrap_or(1.0 / self.n_bins as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::arg("MI estimator needs at least two bins"));
        }
        if !(self.bandwidth() > 0.0) {
            return Err(Error::arg("MI kernel bandwidth must be positive"));
        }
        Ok(())
    }
}

/// Soft bin assignment of a vector, with optional derivative w.r.t. each value.
pub struct SoftAssignment {
    /// `n x bins`, rows sum to 1.
    pub weights: Array2<f64>,
    /// `d weights / d value`, zero where the value was clamped.
    pub derivative: Option<Array2<f64>>,
}

pub fn soft_assign(
    values: &[f64],
    cfg: &MiEstimatorConfig,
    with_derivative: bool,
) -> SoftAssignment {
    let bins = cfg.n_bins;
    let h = cfg.bandwidth();
    let inv_2h2 = 1.0 / (2.0 * h * h);
    let inv_h2 = 1.0 / (h * h);
    let delta = 1.0 / bins as f64;
    let centers: Vec<f64> = (0..bins).map(|b| (b as f64 + 0.5) * delta).collect();
    // neighbouring kernel values differ by a ratio that itself shrinks geometrically
    let q = (-delta * delta * inv_h2).exp();
    let n = values.len();
    let mut weights = Array2::zeros((n, bins));
    let mut derivative = with_derivative.then(|| Array2::zeros((n, bins)));
    for (k, &raw) in values.iter().enumerate() {
        let v = raw.clamp(0.0, 1.0);
        let nearest = ((v * bins as f64) as usize).min(bins - 1);
        let off = v - centers[nearest];
        let mut row = weights.row_mut(k);
        let row = row.as_slice_mut().expect("standard layout");
        row[nearest] = 1.0;
        let mut total = 1.0;
        let mut r = (-(delta * delta - 2.0 * delta * off) * inv_2h2).exp();
        for b in nearest + 1..bins {
            row[b] = row[b - 1] * r;
            total += row[b];
            r *= q;
        }
        let mut r = (-(delta * delta + 2.0 * delta * off) * inv_2h2).exp();
        for b in (0..nearest).rev() {
            row[b] = row[b + 1] * r;
            total += row[b];
            r *= q;
        }
        row.iter_mut().for_each(|w| *w /= total);
        let row = weights.row(k);
        if let Some(der) = derivative.as_mut() {
            if raw > 0.0 && raw < 1.0 {
                let mean_g: f64 = row
                    .iter()
                    .zip(&centers)
                    .map(|(&a, &c)| a * (-(v - c) * inv_h2))
                    .sum();
                for ((dv, &a), &c) in der.row_mut(k).iter_mut().zip(row.iter()).zip(&centers) {
                    *dv = a * (-(v - c) * inv_h2 - mean_g);
                }
            }
        }
    }
    SoftAssignment {
        weights,
        derivative,
    }
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "MI operands have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::shape("MI of empty vectors"));
    }
    Ok(())
}

fn mi_from_joint(joint: &Array2<f64>, px: &Array1<f64>, qy: &Array1<f64>) -> f64 {
    let mut mi = 0.0;
    for ((i, j), &p) in joint.indexed_iter() {
        if p > 0.0 {
            mi += p * (p / (px[i] * qy[j])).ln();
        }
    }
    mi
}

/// MI estimate in nats between the soft histograms of `x` and `y`.
pub fn mutual_information(x: &[f64], y: &[f64], cfg: &MiEstimatorConfig) -> Result<f64> {
    check_lengths(x, y)?;
    let ax = soft_assign(x, cfg, false).weights;
    let ay = soft_assign(y, cfg, false).weights;
    Ok(mi_with_assignments(&ax, &ay).0.max(0.0))
}

fn mi_with_assignments(ax: &Array2<f64>, ay: &Array2<f64>) -> (f64, Array2<f64>, Array1<f64>) {
    let n = ax.nrows() as f64;
    let joint = ax.t().dot(ay) / n;
    let px = ax.sum_axis(Axis(0)) / n;
    let qy = ay.sum_axis(Axis(0)) / n;
    (mi_from_joint(&joint, &px, &qy), joint, qy)
}

/// MI and its gradient w.r.t. `y`, given a precomputed assignment of `x`.
pub fn mutual_information_grad_with(
    ax: &Array2<f64>,
    y: &[f64],
    cfg: &MiEstimatorConfig,
) -> Result<(f64, Vec<f64>)> {
    if ax.nrows() != y.len() {
        return Err(Error::shape(format!(
            "MI operands have lengths {} and {}",
            ax.nrows(),
            y.len()
        )));
    }
    let sy = soft_assign(y, cfg, true);
    let ay = sy.weights;
    let day = sy.derivative.expect("requested");
    let (mi, joint, qy) = mi_with_assignments(ax, &ay);
    // dMI/dP_ij = ln P_ij - ln Q_j
    let g = Array2::from_shape_fn(joint.raw_dim(), |(i, j)| {
        let p = joint[[i, j]];
        if p > 0.0 && qy[j] > 0.0 {
            p.ln() - qy[j].ln()
        } else {
            0.0
        }
    });
    let n = y.len() as f64;
    let proj = ax.dot(&g);
    let grad = proj
        .rows()
        .into_iter()
        .zip(day.rows())
        .map(|(p, d)| p.dot(&d) / n)
        .collect();
    Ok((mi.max(0.0), grad))
}

/// MI and its gradient w.r.t. `y`.
pub fn mutual_information_grad(
    x: &[f64],
    y: &[f64],
    cfg: &MiEstimatorConfig,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(x, y)?;
    let ax = soft_assign(x, cfg, false).weights;
    mutual_information_grad_with(&ax, y, cfg)
}

/// Plain (hard-binned) histogram MI, for diagnostics and symmetry checks.
pub fn mutual_information_hard(x: &[f64], y: &[f64], n_bins: usize) -> Result<f64> {
    check_lengths(x, y)?;
    let bin = |v: f64| ((v.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
    let n = x.len() as f64;
    let mut joint = Array2::<f64>::zeros((n_bins, n_bins));
    for (&a, &b) in x.iter().zip(y) {
        joint[[bin(a), bin(b)]] += 1.0 / n;
    }
    let px = joint.sum_axis(Axis(1));
    let qy = joint.sum_axis(Axis(0));
    Ok(mi_from_joint(&joint, &px, &qy).max(0.0))
}
