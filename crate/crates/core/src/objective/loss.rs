use super::mi::{mutual_information_grad_with, soft_assign, MiEstimatorConfig};
use crate::encoders::stal::sigmoid;
use crate::error::{Error, Result};

/// Loss value, its two components, and gradients w.r.t. the loss inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StalLoss {
    /// `-(1/3) * (I[x;z1] + I[x;z2] + I[x;b])`
    pub mi: f64,
    /// `lambda * |x - b_hat / sum(p)|_1`
    pub sparsity: f64,
    pub total: f64,
    pub d_z1: Vec<f64>,
    pub d_z2: Vec<f64>,
    /// Gradient w.r.t. the unscaled weighted sums.
    pub d_b_hat: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `d L_S / d b_hat = -lambda * sign(x - b_hat/P) / P`.
pub fn sparsity_grad(x_f: &[f64], b_hat: &[f64], lambda: f64, weight_sum: f64) -> Vec<f64> {
    x_f.iter()
        .zip(b_hat)
        .map(|(&x, &b)| -lambda * sign(x - b / weight_sum) / weight_sum)
        .collect()
}

/// Encoder objective for one window.
///
/// `z1` and `z2` must already be aligned to the input width. Hidden
/// activations are squashed with a logistic function before binning so that
/// they share the [0, 1] support of the estimator; `b_hat` is divided by
/// `weight_sum`.
pub fn stal_loss(
    x_f: &[f64],
    z1: &[f64],
    z2: &[f64],
    b_hat: &[f64],
    lambda: f64,
    weight_sum: f64,
    cfg: &MiEstimatorConfig,
) -> Result<StalLoss> {
    let n = x_f.len();
    if z1.len() != n || z2.len() != n || b_hat.len() != n {
        return Err(Error::shape(format!(
            "loss operands have lengths {n}, {}, {}, {}",
            z1.len(),
            z2.len(),
            b_hat.len()
        )));
    }
    if !(weight_sum > 0.0) {
        return Err(Error::arg("position weights must sum to a positive value"));
    }
    let ax = soft_assign(x_f, cfg, false).weights;

    let squashed = |z: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let ds = s.iter().map(|&v| v * (1.0 - v)).collect();
        (s, ds)
    };
    let (s1, ds1) = squashed(z1);
    let (s2, ds2) = squashed(z2);
    let b_scaled: Vec<f64> = b_hat.iter().map(|b| b / weight_sum).collect();

    let (i1, g1) = mutual_information_grad_with(&ax, &s1, cfg)?;
    let (i2, g2) = mutual_information_grad_with(&ax, &s2, cfg)?;
    let (i3, g3) = mutual_information_grad_with(&ax, &b_scaled, cfg)?;

    let third = 1.0 / 3.0;
    let mi = -third * (i1 + i2 + i3);
    let sparsity = lambda
        * x_f
            .iter()
            .zip(&b_scaled)
            .map(|(x, b)| (x - b).abs())
            .sum::<f64>();

    let d_z1 = g1.iter().zip(&ds1).map(|(g, d)| -third * g * d).collect();
    let d_z2 = g2.iter().zip(&ds2).map(|(g, d)| -third * g * d).collect();
    let d_b_hat = sparsity_grad(x_f, b_hat, lambda, weight_sum)
        .into_iter()
        .zip(&g3)
        .map(|(s, g)| s - third * g / weight_sum)
        .collect();

    Ok(StalLoss {
        mi,
        sparsity,
        total: mi + sparsity,
        d_z1,
        d_z2,
        d_b_hat,
    })
}
