//! Two-layer recurrent leaky integrate-and-fire classifier.
//!
//! Per step `t`, with spikes from the previous step on the right-hand side:
//!
//! ```text
//! U1[t] = beta*U1[t-1] + W_in x[t] + W_rec1 S1[t-1] - thr*S1[t-1]
//! S1[t] = H(U1[t] - thr)
//! U2[t] = beta*U2[t-1] + W_12 S1[t] + W_rec2 S2[t-1] - thr*S2[t-1]
//! S2[t] = H(U2[t] - thr)
//! ```
//!
//! The readout is `sum_t S2[t] + sum_t U2[t]`. `H(0) = 1`.

mod train;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::persist::b64_array2;
use crate::rng::{derive_seed, Rng};

pub use train::{make_batches, train_srnn, SrnnEpoch, SrnnHistory, SrnnTrainConfig};

pub const SRNN_FORMAT: &str = "spikeforge.srnn";
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrnnConfig {
    pub n_hidden: usize,
    pub beta: f64,
    pub u_thr: f64,
    pub tau: usize,
    pub surrogate_alpha: f64,
}

impl Default for SrnnConfig {
    fn default() -> Self {
        Self {
            n_hidden: 500,
            beta: 0.99,
            u_thr: 1.0,
            tau: 5,
            surrogate_alpha: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrnnModel {
    pub d_in: usize,
    pub n_hidden: usize,
    pub beta: f64,
    pub u_thr: f64,
    pub tau: usize,
    pub surrogate_alpha: f64,
    pub seed: u64,
    /// `n_hidden x d_in`
    #[serde(with = "b64_array2")]
    pub w_in: Array2<f64>,
    /// `n_hidden x n_hidden`
    #[serde(with = "b64_array2")]
    pub w_rec1: Array2<f64>,
    /// `2 x n_hidden`
    #[serde(with = "b64_array2")]
    pub w_12: Array2<f64>,
    /// `2 x 2`
    #[serde(with = "b64_array2")]
    pub w_rec2: Array2<f64>,
}

/// Membrane potentials and last spikes of both layers for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SrnnState {
    pub u1: Array1<f64>,
    pub s1: Array1<f64>,
    pub u2: Array1<f64>,
    pub s2: Array1<f64>,
}

impl SrnnState {
    pub fn zeros(n_hidden: usize) -> Self {
        Self {
            u1: Array1::zeros(n_hidden),
            s1: Array1::zeros(n_hidden),
            u2: Array1::zeros(N_CLASSES),
            s2: Array1::zeros(N_CLASSES),
        }
    }
}

/// Spike nonlinearity used by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Firing {
    /// Heaviside step.
    Hard,
    /// Antiderivative of the surrogate, for gradient checking.
    Smooth,
}

/// `(1/pi) / (1 + (pi*u*alpha/2)^2)`, with `u` measured from the threshold.
pub fn surrogate_grad(u: f64, alpha: f64) -> f64 {
    let z = std::f64::consts::PI * u * alpha / 2.0;
    std::f64::consts::FRAC_1_PI / (1.0 + z * z)
}

fn smooth_spike(u: f64, alpha: f64) -> f64 {
    let pi = std::f64::consts::PI;
    0.5 + 2.0 / (pi * pi * alpha) * (pi * alpha * u / 2.0).atan()
}

/// One leaky integrate-and-fire update.
///
/// `u` holds the potentials compared against the threshold at the previous
/// step and `s_prev` the spikes they produced; returns the new potentials.
pub fn lif_update(beta: f64, thr: f64, u: f64, s_prev: f64, current: f64) -> f64 {
    beta * u + current - thr * s_prev
}

/// Potential immediately after a reset: `u - thr` at a spike step.
pub fn post_reset(u: f64, spike: f64, thr: f64) -> f64 {
    u - thr * spike
}

/// Pad `b_hat_scaled` with zeros to a multiple of `tau` and split into `tau`
/// consecutive chunks, one per simulation step.
pub fn adapt_input(b_hat_scaled: &[f64], tau: usize) -> Result<Array2<f64>> {
    if tau == 0 {
        return Err(Error::arg("tau must be at least 1"));
    }
    let d_in = b_hat_scaled.len().div_ceil(tau);
    let mut out = Array2::zeros((tau, d_in));
    out.as_slice_mut()
        .expect("standard layout")
        .iter_mut()
        .zip(b_hat_scaled)
        .for_each(|(d, &v)| *d = v);
    Ok(out)
}

/// `input_len` values split over `tau` steps.
pub fn input_width(input_len: usize, tau: usize) -> usize {
    input_len.div_ceil(tau.max(1))
}

/// Per-step record of a batched forward pass.
pub struct SrnnTrace {
    /// `tau` arrays of `B x d_in`.
    pub x: Vec<Array2<f64>>,
    pub u1: Vec<Array2<f64>>,
    pub s1: Vec<Array2<f64>>,
    pub u2: Vec<Array2<f64>>,
    pub s2: Vec<Array2<f64>>,
    /// `B x 2`
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrnnGrads {
    pub w_in: Array2<f64>,
    pub w_rec1: Array2<f64>,
    pub w_12: Array2<f64>,
    pub w_rec2: Array2<f64>,
}

impl SrnnGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        [&self.w_in, &self.w_rec1, &self.w_12, &self.w_rec2]
            .into_iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .collect()
    }
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.uniform(-bound, bound))
}

/// Index of the largest logit; ties go to class 0.
pub fn argmax(logits: ArrayView1<f64>) -> Label {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = k;
        }
    }
    best as Label
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - m).exp());
    let total = e.sum();
    e / total
}

/// Softmax cross-entropy with probabilities clamped to `[1e-12, 1]`.
pub fn cross_entropy(logits: ArrayView1<f64>, label: Label) -> f64 {
    let p = softmax(logits);
    -p[label as usize].clamp(1e-12, 1.0).ln()
}

/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy_grad(logits: ArrayView1<f64>, label: Label) -> Array1<f64> {
    let mut g = softmax(logits);
    g[label as usize] -= 1.0;
    g
}

impl SrnnModel {
    pub fn new(cfg: &SrnnConfig, d_in: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || cfg.n_hidden == 0 || cfg.tau == 0 {
            return Err(Error::arg(
                "input width, hidden size and tau must be positive",
            ));
        }
        if !(cfg.beta > 0.0 && cfg.beta < 1.0) {
            return Err(Error::arg(format!("beta {} must lie in (0, 1)", cfg.beta)));
        }
        if !(cfg.u_thr > 0.0) || !(cfg.surrogate_alpha > 0.0) {
            return Err(Error::arg("threshold and surrogate slope must be positive"));
        }
        let n1 = cfg.n_hidden;
        let mut rng = Rng::new(derive_seed(seed, &[2]));
        let w_in = uniform_matrix(n1, d_in, 1.0 / (d_in as f64).sqrt(), &mut rng);
        let w_rec1 = uniform_matrix(n1, n1, 1.0 / (n1 as f64).sqrt(), &mut rng);
        let w_12 = uniform_matrix(N_CLASSES, n1, 1.0 / (n1 as f64).sqrt(), &mut rng);
        let w_rec2 = uniform_matrix(
            N_CLASSES,
            N_CLASSES,
            1.0 / (N_CLASSES as f64).sqrt(),
            &mut rng,
        );
        Ok(Self {
            d_in,
            n_hidden: n1,
            beta: cfg.beta,
            u_thr: cfg.u_thr,
            tau: cfg.tau,
            surrogate_alpha: cfg.surrogate_alpha,
            seed,
            w_in,
            w_rec1,
            w_12,
            w_rec2,
        })
    }

    pub fn n_params(&self) -> usize {
        self.w_in.len() + self.w_rec1.len() + self.w_12.len() + self.w_rec2.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        [
            &mut self.w_in,
            &mut self.w_rec1,
            &mut self.w_12,
            &mut self.w_rec2,
        ]
        .into_iter()
        .map(|w| w.as_slice_mut().expect("standard layout"))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n1 = self.n_hidden;
        let shapes = [
            (self.w_in.dim(), (n1, self.d_in)),
            (self.w_rec1.dim(), (n1, n1)),
            (self.w_12.dim(), (N_CLASSES, n1)),
            (self.w_rec2.dim(), (N_CLASSES, N_CLASSES)),
        ];
        if shapes.iter().any(|(a, b)| a != b) {
            return Err(Error::shape("SRNN weight shapes do not match its sizes"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) || self.tau == 0 {
            return Err(Error::Data("SRNN constants out of range".into()));
        }
        let finite = |w: &Array2<f64>| w.iter().all(|v| v.is_finite());
        if ![&self.w_in, &self.w_rec1, &self.w_12, &self.w_rec2]
            .into_iter()
            .all(finite)
        {
            return Err(Error::Data("SRNN weights must be finite".into()));
        }
        Ok(())
    }

    fn fire(&self, u: f64, firing: Firing) -> f64 {
        match firing {
            Firing::Hard => f64::from(u >= self.u_thr),
            Firing::Smooth => smooth_spike(u - self.u_thr, self.surrogate_alpha),
        }
    }

    /// One step for a single sample, hard firing.
    pub fn rlif_step(&self, state: &SrnnState, x: ArrayView1<f64>) -> Result<SrnnState> {
        if x.len() != self.d_in {
            return Err(Error::shape(format!(
                "step input has {} values, expected {}",
                x.len(),
                self.d_in
            )));
        }
        let i1 = self.w_in.dot(&x) + self.w_rec1.dot(&state.s1);
        let mut u1 = Array1::zeros(self.n_hidden);
        for k in 0..self.n_hidden {
            u1[k] = lif_update(self.beta, self.u_thr, state.u1[k], state.s1[k], i1[k]);
        }
        let s1 = u1.mapv(|u| self.fire(u, Firing::Hard));
        let i2 = self.w_12.dot(&s1) + self.w_rec2.dot(&state.s2);
        let mut u2 = Array1::zeros(N_CLASSES);
        for k in 0..N_CLASSES {
            u2[k] = lif_update(self.beta, self.u_thr, state.u2[k], state.s2[k], i2[k]);
        }
        let s2 = u2.mapv(|u| self.fire(u, Firing::Hard));
        Ok(SrnnState { u1, s1, u2, s2 })
    }

    /// Batched forward over `B` samples, each a `tau x d_in` step sequence
    /// stored row-major in one row of `inputs` (`B x tau*d_in`).
    pub fn forward_batch(&self, inputs: ArrayView2<f64>, firing: Firing) -> Result<SrnnTrace> {
        let (tau, d_in, n1) = (self.tau, self.d_in, self.n_hidden);
        if inputs.ncols() != tau * d_in {
            return Err(Error::shape(format!(
                "SRNN input has {} columns, expected tau*d_in = {}",
                inputs.ncols(),
                tau * d_in
            )));
        }
        let b = inputs.nrows();
        let thr = self.u_thr;
        let mut trace = SrnnTrace {
            x: Vec::with_capacity(tau),
            u1: Vec::with_capacity(tau),
            s1: Vec::with_capacity(tau),
            u2: Vec::with_capacity(tau),
            s2: Vec::with_capacity(tau),
            logits: Array2::zeros((b, N_CLASSES)),
        };
        let mut u1 = Array2::<f64>::zeros((b, n1));
        let mut s1 = Array2::<f64>::zeros((b, n1));
        let mut u2 = Array2::<f64>::zeros((b, N_CLASSES));
        let mut s2 = Array2::<f64>::zeros((b, N_CLASSES));
        for t in 0..tau {
            let x = inputs.slice(s![.., t * d_in..(t + 1) * d_in]).to_owned();
            let i1 = x.dot(&self.w_in.t()) + s1.dot(&self.w_rec1.t());
            u1 = &u1 * self.beta + &i1 - &(&s1 * thr);
            s1 = u1.mapv(|u| self.fire(u, firing));
            let i2 = s1.dot(&self.w_12.t()) + s2.dot(&self.w_rec2.t());
            u2 = &u2 * self.beta + &i2 - &(&s2 * thr);
            s2 = u2.mapv(|u| self.fire(u, firing));
            trace.logits += &s2;
            trace.logits += &u2;
            trace.x.push(x);
            trace.u1.push(u1.clone());
            trace.s1.push(s1.clone());
            trace.u2.push(u2.clone());
            trace.s2.push(s2.clone());
        }
        Ok(trace)
    }

    /// Forward pass from zero state on one scaled `b_hat` vector.
    pub fn forward(&self, b_hat_scaled: &[f64]) -> Result<SrnnTrace> {
        let x = self.prepare(&[b_hat_scaled])?;
        self.forward_batch(x.view(), Firing::Hard)
    }

    /// Stack adapted inputs into the batched `B x tau*d_in` layout.
    /// Rescale `W_in` so the leak-weighted input drive over one sample has
    /// RMS `u_thr` on the given prepared inputs. Returns the factor applied
    /// (1 when the drive is zero).
    pub fn calibrate_input_scale(&mut self, inputs: ArrayView2<f64>) -> Result<f64> {
        let (tau, d_in) = (self.tau, self.d_in);
        if inputs.ncols() != tau * d_in {
            return Err(Error::shape(format!(
                "SRNN input has {} columns, expected tau*d_in = {}",
                inputs.ncols(),
                tau * d_in
            )));
        }
        let mut drive = Array2::<f64>::zeros((inputs.nrows(), self.n_hidden));
        for t in 0..tau {
            let x = inputs.slice(s![.., t * d_in..(t + 1) * d_in]);
            drive.scaled_add(self.beta.powi((tau - 1 - t) as i32), &x.dot(&self.w_in.t()));
        }
        let rms = (drive.mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt();
        if !(rms > 0.0) || !rms.is_finite() {
            return Ok(1.0);
        }
        let factor = self.u_thr / rms;
        self.w_in *= factor;
        Ok(factor)
    }

    pub fn prepare(&self, b_hats: &[&[f64]]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((b_hats.len(), self.tau * self.d_in));
        for (mut row, b) in out.rows_mut().into_iter().zip(b_hats) {
            let adapted = adapt_input(b, self.tau)?;
            if adapted.ncols() != self.d_in {
                return Err(Error::shape(format!(
                    "input of length {} gives {} values per step, model expects {}",
                    b.len(),
                    adapted.ncols(),
                    self.d_in
                )));
            }
            row.iter_mut()
                .zip(adapted.iter())
                .for_each(|(d, &v)| *d = v);
        }
        Ok(out)
    }

    pub fn logits(&self, b_hat_scaled: &[f64]) -> Result<Array1<f64>> {
        Ok(self.forward(b_hat_scaled)?.logits.row(0).to_owned())
    }

    pub fn predict(&self, b_hat_scaled: &[f64]) -> Result<Label> {
        Ok(argmax(self.logits(b_hat_scaled)?.view()))
    }

    pub fn predict_proba(&self, b_hat_scaled: &[f64]) -> Result<Array1<f64>> {
        Ok(softmax(self.logits(b_hat_scaled)?.view()))
    }

    /// Class probabilities for many inputs, `B x 2`.
    pub fn predict_proba_batch(&self, b_hats: &[&[f64]]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((b_hats.len(), N_CLASSES));
        for (chunk_idx, chunk) in b_hats.chunks(256).enumerate() {
            let x = self.prepare(chunk)?;
            let trace = self.forward_batch(x.view(), Firing::Hard)?;
            for (k, row) in trace.logits.rows().into_iter().enumerate() {
                out.row_mut(chunk_idx * 256 + k).assign(&softmax(row));
            }
        }
        Ok(out)
    }

    /// Backpropagation through time given `d loss / d logits` (`B x 2`).
    pub fn backward(&self, trace: &SrnnTrace, d_logits: &Array2<f64>) -> SrnnGrads {
        let (tau, n1) = (self.tau, self.n_hidden);
        let b = d_logits.nrows();
        let thr = self.u_thr;
        let alpha = self.surrogate_alpha;
        let sg = |u: &Array2<f64>| u.mapv(|v| surrogate_grad(v - thr, alpha));
        let mut grads = SrnnGrads {
            w_in: Array2::zeros(self.w_in.raw_dim()),
            w_rec1: Array2::zeros(self.w_rec1.raw_dim()),
            w_12: Array2::zeros(self.w_12.raw_dim()),
            w_rec2: Array2::zeros(self.w_rec2.raw_dim()),
        };
        let mut du1_next = Array2::<f64>::zeros((b, n1));
        let mut du2_next = Array2::<f64>::zeros((b, N_CLASSES));
        let zeros1 = Array2::<f64>::zeros((b, n1));
        let zeros2 = Array2::<f64>::zeros((b, N_CLASSES));
        for t in (0..tau).rev() {
            let ds2 = d_logits + &du2_next.dot(&self.w_rec2) - &(&du2_next * thr);
            let du2 = d_logits + &(&du2_next * self.beta) + &(&ds2 * &sg(&trace.u2[t]));
            let ds1 = du2.dot(&self.w_12) + du1_next.dot(&self.w_rec1) - &du1_next * thr;
            let du1 = &du1_next * self.beta + &(&ds1 * &sg(&trace.u1[t]));
            let (s1_prev, s2_prev) = if t == 0 {
                (&zeros1, &zeros2)
            } else {
                (&trace.s1[t - 1], &trace.s2[t - 1])
            };
            grads.w_in += &du1.t().dot(&trace.x[t]);
            grads.w_rec1 += &du1.t().dot(s1_prev);
            grads.w_12 += &du2.t().dot(&trace.s1[t]);
            grads.w_rec2 += &du2.t().dot(s2_prev);
            du1_next = du1;
            du2_next = du2;
        }
        grads
    }

    /// Mean cross-entropy over a batch and its gradients.
    pub fn loss_and_grads(
        &self,
        inputs: ArrayView2<f64>,
        labels: &[Label],
        firing: Firing,
    ) -> Result<(f64, SrnnGrads, Array2<f64>)> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape("one label per input row required"));
        }
        let trace = self.forward_batch(inputs, firing)?;
        let n = labels.len() as f64;
        let mut d_logits = Array2::zeros(trace.logits.raw_dim());
        let mut loss = 0.0;
        for ((row, mut d), &y) in trace
            .logits
            .axis_iter(Axis(0))
            .zip(d_logits.axis_iter_mut(Axis(0)))
            .zip(labels)
        {
            loss += cross_entropy(row, y) / n;
            d.assign(&(cross_entropy_grad(row, y) / n));
        }
        let grads = self.backward(&trace, &d_logits);
        Ok((loss, grads, trace.logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single_neuron(beta: f64) -> SrnnModel {
        let cfg = SrnnConfig {
            n_hidden: 1,
            beta,
            tau: 1,
            ..SrnnConfig::default()
        };
        let mut m = SrnnModel::new(&cfg, 1, 0).unwrap();
        m.w_in.fill(1.0);
        m.w_rec1.fill(0.0);
        m.w_12.fill(0.0);
        m.w_rec2.fill(0.0);
        m
    }

    #[test]
    fn constant_input_trajectory() {
        let m = single_neuron(0.99);
        let mut st = SrnnState::zeros(1);
        let x = array![0.5];
        let mut us = Vec::new();
        for _ in 0..3 {
            st = m.rlif_step(&st, x.view()).unwrap();
            us.push((st.u1[0], st.s1[0]));
        }
        assert!((us[0].0 - 0.5).abs() < 1e-12 && us[0].1 == 0.0);
        assert!((us[1].0 - 0.995).abs() < 1e-12 && us[1].1 == 0.0);
        assert!((us[2].0 - 1.48505).abs() < 1e-12 && us[2].1 == 1.0);
        assert!((post_reset(us[2].0, us[2].1, m.u_thr) - 0.48505).abs() < 1e-12);
        let next = m.rlif_step(&st, x.view()).unwrap();
        assert!((next.u1[0] - (0.99 * 1.48505 + 0.5 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let m = SrnnModel::new(
            &SrnnConfig {
                n_hidden: 6,
                ..SrnnConfig::default()
            },
            4,
            3,
        )
        .unwrap();
        let mut st = SrnnState::zeros(6);
        for _ in 0..50 {
            st = m.rlif_step(&st, Array1::zeros(4).view()).unwrap();
            assert!(st.u1.iter().chain(st.u2.iter()).all(|&u| u == 0.0));
            assert!(st.s1.iter().chain(st.s2.iter()).all(|&s| s == 0.0));
        }
    }

    #[test]
    fn strong_input_fires_every_step() {
        let m = single_neuron(0.9);
        let drive = m.u_thr / (1.0 - m.beta);
        let mut st = SrnnState::zeros(1);
        let mut first = None;
        for t in 0..100 {
            st = m.rlif_step(&st, array![drive].view()).unwrap();
            if st.s1[0] == 1.0 {
                first.get_or_insert(t);
            } else {
                assert!(first.is_none(), "silent at step {t} after firing");
            }
        }
        assert_eq!(first, Some(0));
    }

    #[test]
    fn adapt_input_layout() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let a = adapt_input(&v, 5).unwrap();
        assert_eq!(a.dim(), (5, 2));
        assert_eq!(a.as_slice().unwrap(), v.as_slice());
        let a = adapt_input(&v[..9], 5).unwrap();
        assert_eq!(a.dim(), (5, 2));
        assert_eq!(a[[4, 0]], 8.0);
        assert_eq!(a[[4, 1]], 0.0);
        let a = adapt_input(&v, 1).unwrap();
        assert_eq!(a.dim(), (1, 10));
        assert!(adapt_input(&v, 0).is_err());
    }

    #[test]
    fn zero_model_ties_to_class_zero() {
        let cfg = SrnnConfig {
            n_hidden: 4,
            tau: 5,
            ..SrnnConfig::default()
        };
        let mut m = SrnnModel::new(&cfg, 2, 1).unwrap();
        for p in m.params_mut() {
            p.fill(0.0);
        }
        let logits = m.logits(&[0.0; 10]).unwrap();
        assert_eq!(logits.to_vec(), vec![0.0, 0.0]);
        assert_eq!(m.predict(&[0.0; 10]).unwrap(), 0);
    }

    #[test]
    fn hand_wired_model_prefers_class_one() {
        let cfg = SrnnConfig {
            n_hidden: 1,
            tau: 5,
            ..SrnnConfig::default()
        };
        let mut m = SrnnModel::new(&cfg, 2, 1).unwrap();
        m.w_in.fill(1.0);
        m.w_rec1.fill(0.0);
        m.w_12.assign(&array![[0.0], [1.0]]);
        m.w_rec2.fill(0.0);
        let input = [1.0; 10];
        assert_eq!(m.predict(&input).unwrap(), 1);
        let p = m.predict_proba(&input).unwrap();
        assert!(p[1] > 0.5 && (p.sum() - 1.0).abs() < 1e-12);
        assert_eq!(m.logits(&input).unwrap(), m.logits(&input).unwrap());

        // oracle: trace the same network by single steps
        let steps = adapt_input(&input, 5).unwrap();
        let mut st = SrnnState::zeros(1);
        let mut acc = Array1::<f64>::zeros(2);
        for row in steps.rows() {
            st = m.rlif_step(&st, row).unwrap();
            acc = acc + &st.s2 + &st.u2;
        }
        assert_eq!(acc, m.logits(&input).unwrap());
    }

    #[test]
    fn cross_entropy_cases() {
        assert!(cross_entropy(array![20.0, -20.0].view(), 0) < 1e-8);
        for y in [0, 1] {
            assert!((cross_entropy(array![0.0, 0.0].view(), y) - 2f64.ln()).abs() < 1e-15);
        }
        let z = array![0.3, -0.7];
        for y in [0u8, 1] {
            let g = cross_entropy_grad(z.view(), y);
            for k in 0..2 {
                let h = 1e-6;
                let mut up = z.clone();
                up[k] += h;
                let mut dn = z.clone();
                dn[k] -= h;
                let fd = (cross_entropy(up.view(), y) - cross_entropy(dn.view(), y)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn surrogate_shape() {
        assert!((surrogate_grad(0.0, 2.0) - std::f64::consts::FRAC_1_PI).abs() < 1e-15);
        assert!(surrogate_grad(1e9, 2.0) < 1e-15);
        assert!(surrogate_grad(-1e9, 2.0) < 1e-15);
        for u in [0.1, 1.0, 10.0] {
            assert_eq!(surrogate_grad(u, 2.0), surrogate_grad(-u, 2.0));
            assert!(
                surrogate_grad(u, 2.0) > 0.0 && surrogate_grad(u, 2.0) < surrogate_grad(0.0, 2.0)
            );
        }
        // the smooth spike is the surrogate's antiderivative
        let h = 1e-6;
        for u in [-1.0, -0.1, 0.0, 0.3, 2.0] {
            let fd = (smooth_spike(u + h, 2.0) - smooth_spike(u - h, 2.0)) / (2.0 * h);
            assert!((fd - surrogate_grad(u, 2.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let z = array![rng.normal(), rng.normal()];
            let c = rng.uniform(0.01, 100.0);
            assert_eq!(argmax(z.view()), argmax((&z * c).view()));
        }
        assert_eq!(argmax(array![1.0, 1.0].view()), 0);
    }

    #[test]
    fn bad_config_rejected() {
        for cfg in [
            SrnnConfig {
                beta: 1.0,
                ..SrnnConfig::default()
            },
            SrnnConfig {
                beta: 0.0,
                ..SrnnConfig::default()
            },
            SrnnConfig {
                tau: 0,
                ..SrnnConfig::default()
            },
        ] {
            assert!(matches!(
                SrnnModel::new(&cfg, 3, 0),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn calibration_sets_drive_rms_to_threshold() {
        let cfg = SrnnConfig {
            n_hidden: 5,
            tau: 3,
            ..SrnnConfig::default()
        };
        let mut m = SrnnModel::new(&cfg, 4, 2).unwrap();
        let mut rng = Rng::new(11);
        let inputs = Array2::from_shape_fn((30, 12), |_| 0.01 * rng.next_f64());
        let factor = m.calibrate_input_scale(inputs.view()).unwrap();
        assert!(factor > 1.0);
        let mut sq = 0.0;
        for row in inputs.rows() {
            for h in 0..5 {
                let mut d = 0.0;
                for t in 0..3 {
                    for i in 0..4 {
                        d += m.beta.powi(2 - t as i32) * row[t * 4 + i] * m.w_in[[h, i]];
                    }
                }
                sq += d * d;
            }
        }
        assert!(((sq / 150.0).sqrt() - m.u_thr).abs() < 1e-9);
        let mut z = SrnnModel::new(&cfg, 4, 2).unwrap();
        assert_eq!(
            z.calibrate_input_scale(Array2::zeros((3, 12)).view())
                .unwrap(),
            1.0
        );
        assert!(z
            .calibrate_input_scale(Array2::zeros((3, 11)).view())
            .is_err());
    }
}
