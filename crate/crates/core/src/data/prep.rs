use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::{Dataset, Recording, Window, WindowSet};
use crate::error::{Error, Result};

/// Preprocessing knobs: trim -> normalize -> zero-pad -> window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub trim_threshold: usize,
    pub trim_cut: usize,
    /// Pad target; `None` pads to the longest recording after trimming.
    pub pad_to: Option<usize>,
    pub omega: usize,
    /// Defaults to `omega` (non-overlapping windows) when `None`.
    pub stride: Option<usize>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            trim_threshold: 18_000,
            trim_cut: 6_000,
            pad_to: None,
            omega: 3_000,
            stride: None,
        }
    }
}

impl PrepConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.omega)
    }
}

/// Drop `cut` frames from each end of recordings longer than `threshold`.
pub fn trim(rec: &Recording, threshold: usize, cut: usize) -> Recording {
    let len = rec.len();
    if len <= threshold {
        return rec.clone();
    }
    let (start, keep) = if 2 * cut >= len {
        log::warn!(
            "trim of {}/{}: 2*{cut} >= {len} frames, keeping the centre frame",
            rec.subject_id,
            rec.modality
        );
        (len / 2, 1)
    } else {
        (cut, len - 2 * cut)
    };
    Recording {
        data: rec.data.slice(s![start..start + keep, ..]).to_owned(),
        ..rec.clone()
    }
}

/// Joint min-max scaling of all channels to [0, 1]; constant input maps to 0.
pub fn normalize(rec: &Recording) -> Recording {
    let (lo, hi) = rec
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data = if range > 0.0 && range.is_finite() {
        rec.data.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
    } else {
        Array2::zeros(rec.data.raw_dim())
    };
    Recording {
        data,
        ..rec.clone()
    }
}

/// Append zero rows until the recording is `target_len` long.
pub fn pad_to(rec: &Recording, target_len: usize) -> Result<Recording> {
    let len = rec.len();
    if len > target_len {
        return Err(Error::arg(format!(
            "{}/{} has {len} frames, longer than pad target {target_len}",
            rec.subject_id, rec.modality
        )));
    }
    let mut data = Array2::zeros((target_len, rec.channels()));
    data.slice_mut(s![..len, ..]).assign(&rec.data);
    Ok(Recording {
        data,
        ..rec.clone()
    })
}

/// Trim, normalize and pad every recording of a dataset.
pub fn preprocess(ds: &Dataset, cfg: &PrepConfig) -> Result<Dataset> {
    let mut out = Dataset {
        labels: ds.labels.clone(),
        ..Dataset::default()
    };
    let normalized: Vec<Recording> = ds
        .iter_recordings()
        .map(|r| normalize(&trim(r, cfg.trim_threshold, cfg.trim_cut)))
        .collect();
    let longest = normalized.iter().map(Recording::len).max().unwrap_or(0);
    let target = cfg.pad_to.unwrap_or(longest);
    for rec in normalized {
        out.insert(pad_to(&rec, target)?);
    }
    Ok(out)
}

/// Cut windows at offsets 0, stride, 2*stride, ...; incomplete tails are dropped.
pub fn make_windows(ds: &Dataset, omega: usize, stride: usize) -> Result<WindowSet> {
    if omega == 0 || stride == 0 {
        return Err(Error::arg("window length and stride must be positive"));
    }
    let mut windows = Vec::new();
    for (subject, recs) in &ds.recordings {
        let label = ds
            .label(subject)
            .ok_or_else(|| Error::Data(format!("subject {subject} has no label")))?;
        for rec in recs.values() {
            let len = rec.len();
            if omega > len {
                return Err(Error::arg(format!(
                    "window length {omega} exceeds {subject}/{} length {len}",
                    rec.modality
                )));
            }
            let mut offset = 0;
            while offset + omega <= len {
                windows.push(Window {
                    subject_id: subject.clone(),
                    modality: rec.modality,
                    offset,
                    label,
                    data: rec.data.slice(s![offset..offset + omega, ..]).to_owned(),
                });
                offset += stride;
            }
        }
    }
    Ok(WindowSet {
        windows,
        omega,
        stride,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn rec(data: Array2<f64>) -> Recording {
        Recording {
            subject_id: "s".into(),
            modality: Modality::Semg,
            data,
            sample_rate_hz: 60.0,
            pain_intensity: None,
        }
    }

    fn ramp(len: usize) -> Recording {
        rec(Array1::range(0.0, len as f64, 1.0)
            .into_shape_with_order((len, 1))
            .unwrap())
    }

    #[test]
    fn trim_long_recording() {
        let r = trim(&ramp(20_000), 18_000, 6_000);
        assert_eq!(r.len(), 8_000);
        assert_eq!(r.data[[0, 0]], 6_000.0);
        assert_eq!(r.data[[7_999, 0]], 13_999.0);
    }

    #[test]
    fn trim_leaves_short_recordings() {
        assert_eq!(trim(&ramp(18_000), 18_000, 6_000).len(), 18_000);
        assert_eq!(trim(&ramp(100), 18_000, 6_000).len(), 100);
    }

    #[test]
    fn trim_degenerate_keeps_one_frame() {
        let r = trim(&ramp(10), 5, 6);
        assert_eq!(r.len(), 1);
        assert_eq!(r.data[[0, 0]], 5.0);
    }

    #[test]
    fn normalize_endpoints() {
        let r = normalize(&rec(array![[2.0], [4.0], [6.0]]));
        assert_eq!(r.data, array![[0.0], [0.5], [1.0]]);
        let c = normalize(&rec(array![[3.0], [3.0], [3.0]]));
        assert_eq!(c.data, array![[0.0], [0.0], [0.0]]);
    }

    #[test]
    fn pad_appends_zero_rows() {
        let r = pad_to(&rec(Array2::ones((10, 2))), 12).unwrap();
        assert_eq!(r.len(), 12);
        assert!(r.data.slice(s![10.., ..]).iter().all(|&v| v == 0.0));
        assert_eq!(pad_to(&ramp(17_995), 17_995).unwrap(), ramp(17_995));
        assert!(matches!(pad_to(&ramp(13), 12), Err(Error::Argument(_))));
    }

    fn one_subject(len: usize) -> Dataset {
        let mut ds = Dataset::default();
        ds.insert(ramp(len));
        ds.set_label("s", 0).unwrap();
        ds
    }

    #[test]
    fn window_counts() {
        assert_eq!(
            make_windows(&one_subject(17_995), 3_000, 3_000)
                .unwrap()
                .len(),
            5
        );
        assert_eq!(
            make_windows(&one_subject(3_000), 3_000, 3_000)
                .unwrap()
                .len(),
            1
        );
        let ws = make_windows(&one_subject(6_000), 3_000, 1_500).unwrap();
        let offsets: Vec<usize> = ws.windows.iter().map(|w| w.offset).collect();
        assert_eq!(offsets, vec![0, 1_500, 3_000]);
        assert!(make_windows(&one_subject(10), 11, 1).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_spans_unit_interval(
            vals in proptest::collection::vec(-1e3f64..1e3, 2..64)
        ) {
            let n = vals.len();
            let r = rec(Array2::from_shape_vec((n, 1), vals).unwrap());
            let once = normalize(&r);
            let twice = normalize(&once);
            let non_constant = r.data.iter().any(|&v| v != r.data[[0, 0]]);
            for (a, b) in once.data.iter().zip(twice.data.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            if non_constant {
                let lo = once.data.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = once.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }

        #[test]
        fn chain_window_count_and_range(
            lens in proptest::collection::vec(20usize..200, 1..4),
            omega in 1usize..20,
            stride in 1usize..20,
            seed in 0u64..1000,
        ) {
            let mut rng = crate::rng::Rng::new(seed);
            let mut ds = Dataset::default();
            for (i, &len) in lens.iter().enumerate() {
                let data = Array2::from_shape_fn((len, 3), |_| rng.uniform(-5.0, 5.0));
                let mut r = rec(data);
                r.subject_id = format!("s{i}");
                ds.insert(r);
                ds.set_label(&format!("s{i}"), (i % 2) as u8).unwrap();
            }
            let prep = preprocess(&ds, &PrepConfig { trim_threshold: 150, trim_cut: 10, ..Default::default() }).unwrap();
            let ws = make_windows(&prep, omega, stride).unwrap();
            let expected: usize = prep.iter_recordings().map(|r| (r.len() - omega) / stride + 1).sum();
            prop_assert_eq!(ws.len(), expected);
            for w in &ws.windows {
                prop_assert_eq!(w.data.nrows(), omega);
                prop_assert!(w.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
