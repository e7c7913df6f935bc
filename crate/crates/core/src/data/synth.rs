//! Synthetic multimodal recordings with a class-dependent structure.
//!
//! Healthy and CLBP subjects share the same generative model; CLBP subjects
//! get a per-subject severity in `[severity_min, severity_max]` that
//!
//! * raises sEMG burst frequency and tonic (guarding) activity while
//!   flattening the burst envelope,
//! * shrinks the range of motion of the trunk joints (the first
//!   `trunk_joints` Angle channels), which also lowers their Energy.
//!
//! Every subject additionally draws nuisance parameters (gains, offsets,
//! movement tempo, phases) so that class membership is not readable from a
//! single sample.

use std::f64::consts::TAU;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{derive_label, ChannelSchema, Dataset, Modality, Recording, DEFAULT_SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_positive: usize,
    pub length: usize,
    pub seed: u64,
    pub severity_min: f64,
    pub severity_max: f64,
    pub trunk_joints: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            n_positive: 3,
            length: 6_000,
            seed: 0,
            severity_min: 0.5,
            severity_max: 1.0,
            trunk_joints: 7,
            noise: 0.05,
        }
    }
}

/// Deterministic synthetic stand-in dataset using the reference channel schema.
pub fn synthesize_dataset(
    n_subjects: usize,
    n_positive: usize,
    length: usize,
    seed: u64,
) -> Result<Dataset> {
    synthesize(&SynthConfig {
        n_subjects,
        n_positive,
        length,
        seed,
        ..SynthConfig::default()
    })
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_subjects == 0 {
        return Err(Error::arg("need at least one subject"));
    }
    if cfg.n_positive > cfg.n_subjects {
        return Err(Error::arg(format!(
            "{} positive subjects requested out of {}",
            cfg.n_positive, cfg.n_subjects
        )));
    }
    if cfg.length == 0 {
        return Err(Error::arg("recording length must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.severity_min) || cfg.severity_max < cfg.severity_min {
        return Err(Error::arg("severity range must lie in [0, 1]"));
    }

    let schema = ChannelSchema::reference();
    let mut order: Vec<usize> = (0..cfg.n_subjects).collect();
    Rng::new(derive_seed(cfg.seed, &[0])).shuffle(&mut order);
    let mut positive = vec![false; cfg.n_subjects];
    for &i in &order[..cfg.n_positive] {
        positive[i] = true;
    }

    let width = cfg.n_subjects.to_string().len().max(2);
    let mut ds = Dataset::default();
    for (i, &pos) in positive.iter().enumerate() {
        let id = format!("S{:0width$}", i + 1);
        let mut rng = Rng::new(derive_seed(cfg.seed, &[1, i as u64]));
        let pain = if pos {
            6 + rng.below(5) as u8
        } else {
            rng.below(6) as u8
        };
        let severity = if pos {
            rng.uniform(cfg.severity_min, cfg.severity_max)
        } else {
            0.0
        };
        let subject = SubjectParams::draw(&mut rng, severity, cfg, &schema);
        for m in Modality::ALL {
            let data = subject.render(m, cfg.length, &mut rng);
            ds.insert(Recording {
                subject_id: id.clone(),
                modality: m,
                data,
                sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
                pain_intensity: Some(pain),
            });
        }
        ds.labels.insert(id, derive_label(i64::from(pain))?);
    }
    Ok(ds)
}

struct SubjectParams {
    noise: f64,
    burst_hz: f64,
    tonic: f64,
    burst_gain: Vec<f64>,
    burst_phase: Vec<f64>,
    move_hz: f64,
    offset: Vec<f64>,
    rom: Vec<f64>,
    joint_phase: Vec<f64>,
}

impl SubjectParams {
    fn draw(rng: &mut Rng, severity: f64, cfg: &SynthConfig, schema: &ChannelSchema) -> Self {
        let n_emg = schema.channels(Modality::Semg).unwrap_or(4);
        let n_joint = schema.channels(Modality::Angle).unwrap_or(13);
        let burst_hz = rng.uniform(0.2, 0.35) + 0.4 * severity;
        let tonic = rng.uniform(0.02, 0.08) + 0.3 * severity;
        let burst_gain = (0..n_emg)
            .map(|_| rng.uniform(0.6, 1.2) * (1.0 - 0.3 * severity))
            .collect();
        let burst_phase = (0..n_emg).map(|_| rng.uniform(0.0, TAU)).collect();
        let move_hz = rng.uniform(0.12, 0.22);
        let offset = (0..n_joint).map(|_| rng.uniform(-0.3, 0.3)).collect();
        let rom = (0..n_joint)
            .map(|k| {
                let base = rng.uniform(0.6, 1.0);
                if k < cfg.trunk_joints {
                    base * (1.0 - 0.65 * severity)
                } else {
                    base
                }
            })
            .collect();
        let joint_phase = (0..n_joint).map(|_| rng.uniform(0.0, TAU)).collect();
        Self {
            noise: cfg.noise,
            burst_hz,
            tonic,
            burst_gain,
            burst_phase,
            move_hz,
            offset,
            rom,
            joint_phase,
        }
    }

    fn render(&self, m: Modality, len: usize, rng: &mut Rng) -> Array2<f64> {
        let fs = DEFAULT_SAMPLE_RATE_HZ;
        match m {
            Modality::Semg => {
                let c = self.burst_gain.len();
                Array2::from_shape_fn((len, c), |(t, k)| {
                    let cyc = 0.5
                        * (1.0 + (TAU * self.burst_hz * t as f64 / fs + self.burst_phase[k]).sin());
                    let env = self.tonic + self.burst_gain[k] * cyc.powi(3);
                    env * (0.3 + 0.7 * rng.normal().abs())
                })
            }
            Modality::Angle => {
                let c = self.rom.len();
                Array2::from_shape_fn((len, c), |(t, k)| {
                    let arg = TAU * self.move_hz * t as f64 / fs + self.joint_phase[k];
                    self.offset[k] + self.rom[k] * arg.sin() + self.noise * rng.normal()
                })
            }
            Modality::Energy => {
                let c = self.rom.len();
                Array2::from_shape_fn((len, c), |(t, k)| {
                    let arg = TAU * self.move_hz * t as f64 / fs + self.joint_phase[k];
                    (self.rom[k] * arg.cos()).powi(2) + self.noise * rng.normal().abs()
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize_dataset(10, 3, 600, 7).unwrap();
        let b = synthesize_dataset(10, 3, 600, 7).unwrap();
        assert_eq!(a, b);
        let c = synthesize_dataset(10, 3, 600, 8).unwrap();
        assert_ne!(
            a.recording("S01", Modality::Semg).unwrap().data,
            c.recording("S01", Modality::Semg).unwrap().data
        );
    }

    #[test]
    fn labels_and_schema() {
        let ds = synthesize_dataset(10, 3, 50, 1).unwrap();
        assert_eq!(ds.n_recordings(), 30);
        assert_eq!(ds.labels.values().filter(|&&l| l == 1).count(), 3);
        for rec in ds.iter_recordings() {
            let expected = ChannelSchema::reference().channels(rec.modality).unwrap();
            assert_eq!(rec.channels(), expected);
            assert_eq!(rec.len(), 50);
            let p = rec.pain_intensity.unwrap();
            assert_eq!(ds.label(&rec.subject_id).unwrap(), u8::from(p > 5));
        }
        ds.validate().unwrap();
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            synthesize_dataset(10, 11, 100, 0),
            Err(Error::Argument(_))
        ));
        assert!(synthesize_dataset(10, 3, 0, 0).is_err());
        assert!(synthesize_dataset(0, 0, 10, 0).is_err());
    }
}
