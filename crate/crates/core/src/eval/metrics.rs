use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Fraction of active slots.
pub fn spike_density(spikes: &[u8]) -> Result<f64> {
    if spikes.is_empty() {
        return Err(Error::arg("density of an empty spike train"));
    }
    Ok(spikes.iter().map(|&s| s as usize).sum::<usize>() as f64 / spikes.len() as f64)
}

/// Harmonic mean of the modality densities; 0 if any density is 0.
pub fn ensemble_density(d_semg: f64, d_energy: f64, d_angle: f64) -> f64 {
    let ds = [d_semg, d_energy, d_angle];
    if ds.iter().any(|&d| d <= 0.0) {
        return 0.0;
    }
    3.0 / ds.iter().map(|d| 1.0 / d).sum::<f64>()
}

/// Binary confusion counts; class 1 is positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same outcomes with the class roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

pub fn confusion(pred: &[Label], truth: &[Label]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("confusion of empty vectors"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// F1 of the positive class.
    pub f1_positive: f64,
    pub f1_negative: f64,
    pub mcc: f64,
    /// 0.5 when undefined.
    pub auc: f64,
    pub auc_defined: bool,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.iter().any(|&f| f == 0.0) {
        return 0.0;
    }
    (tp * tn - fp * fn_) / factors.iter().product::<f64>().sqrt()
}

/// Mann-Whitney AUC with average ranks for ties; `None` without both classes.
pub fn auc(scores: &[f64], truth: &[Label]) -> Result<Option<f64>> {
    if scores.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = truth
        .iter()
        .zip(&ranks)
        .filter(|(&t, _)| t == 1)
        .map(|(_, r)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos * n_neg) as f64))
}

/// Accuracy, macro-F1, MCC and (given scores) AUC.
pub fn metrics(counts: &ConfusionCounts, scores: Option<(&[f64], &[Label])>) -> Result<Metrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::arg("metrics of zero evaluated units"));
    }
    let f1_positive = f1(counts.tp, counts.fp, counts.fn_);
    let f1_negative = f1(counts.tn, counts.fn_, counts.fp);
    let auc_value = match scores {
        Some((s, t)) => auc(s, t)?,
        None => None,
    };
    if scores.is_some() && auc_value.is_none() {
        log::warn!("AUC undefined with a single class present; reporting 0.5");
    }
    Ok(Metrics {
        accuracy: (counts.tp + counts.tn) as f64 / total as f64,
        macro_f1: (f1_positive + f1_negative) / 2.0,
        f1_positive,
        f1_negative,
        mcc: mcc(counts),
        auc: auc_value.unwrap_or(0.5),
        auc_defined: auc_value.is_some(),
    })
}
