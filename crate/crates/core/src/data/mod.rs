//! Biosignal recordings, datasets and the windowing pipeline.

mod csv_io;
mod prep;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, write_csv, write_recording_csv, CSV_HEADER};
pub use prep::{make_windows, normalize, pad_to, preprocess, trim, PrepConfig};
pub use synth::{synthesize, synthesize_dataset, SynthConfig};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 60.0;

/// One input stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "sEMG")]
    Semg,
    Angle,
    Energy,
}

impl Modality {
    /// Canonical order; also the meta-feature layout of the ensemble.
    pub const ALL: [Modality; 3] = [Modality::Semg, Modality::Angle, Modality::Energy];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Semg => "sEMG",
            Modality::Angle => "Angle",
            Modality::Energy => "Energy",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Modality::Semg => 0,
            Modality::Angle => 1,
            Modality::Energy => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sEMG" => Ok(Modality::Semg),
            "Angle" => Ok(Modality::Angle),
            "Energy" => Ok(Modality::Energy),
            other => Err(Error::arg(format!("unknown modality {other:?}"))),
        }
    }
}

/// Binary class label: 0 = healthy, 1 = CLBP.
pub type Label = u8;

/// Channel count per modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema(pub BTreeMap<Modality, usize>);

impl ChannelSchema {
    /// Four sEMG sensors, 13 joint angles, 13 joint energies.
    pub fn reference() -> Self {
        Self(BTreeMap::from([
            (Modality::Semg, 4),
            (Modality::Angle, 13),
            (Modality::Energy, 13),
        ]))
    }

    pub fn channels(&self, m: Modality) -> Option<usize> {
        self.0.get(&m).copied()
    }
}

impl Default for ChannelSchema {
    fn default() -> Self {
        Self::reference()
    }
}

/// One subject x one modality, time-major (`time x channels`).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub modality: Modality,
    pub data: Array2<f64>,
    pub sample_rate_hz: f64,
    pub pain_intensity: Option<u8>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

/// 1 iff the self-reported pain intensity exceeds 5.
pub fn derive_label(pain_intensity: i64) -> Result<Label> {
    if !(0..=10).contains(&pain_intensity) {
        return Err(Error::arg(format!(
            "pain intensity {pain_intensity} outside 0..=10"
        )));
    }
    Ok(u8::from(pain_intensity > 5))
}

/// Recordings grouped by subject, plus per-subject labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub recordings: BTreeMap<String, BTreeMap<Modality, Recording>>,
    pub labels: BTreeMap<String, Label>,
}

impl Dataset {
    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.recordings.keys().map(String::as_str)
    }

    pub fn n_subjects(&self) -> usize {
        self.recordings.len()
    }

    pub fn n_recordings(&self) -> usize {
        self.recordings.values().map(BTreeMap::len).sum()
    }

    pub fn iter_recordings(&self) -> impl Iterator<Item = &Recording> {
        self.recordings.values().flat_map(|m| m.values())
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.recordings
            .values()
            .next()
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn recording(&self, subject: &str, modality: Modality) -> Option<&Recording> {
        self.recordings.get(subject)?.get(&modality)
    }

    pub fn insert(&mut self, rec: Recording) {
        self.recordings
            .entry(rec.subject_id.clone())
            .or_default()
            .insert(rec.modality, rec);
    }

    /// Supply a label for a subject that carries no pain intensity.
    pub fn set_label(&mut self, subject: &str, label: Label) -> Result<()> {
        if !self.recordings.contains_key(subject) {
            return Err(Error::Data(format!("unknown subject {subject}")));
        }
        if label > 1 {
            return Err(Error::arg(format!("label {label} is not binary")));
        }
        self.labels.insert(subject.to_string(), label);
        Ok(())
    }

    pub fn label(&self, subject: &str) -> Option<Label> {
        self.labels.get(subject).copied()
    }

    /// Check the structural invariants: same modality set for every subject,
    /// every subject labeled, finite values and a consistent channel count.
    pub fn validate(&self) -> Result<()> {
        let modalities = self.modalities();
        let mut channels: BTreeMap<Modality, usize> = BTreeMap::new();
        for (subject, recs) in &self.recordings {
            let here: Vec<Modality> = recs.keys().copied().collect();
            if here != modalities {
                return Err(Error::Data(format!(
                    "subject {subject} has modalities {here:?}, expected {modalities:?}"
                )));
            }
            if !self.labels.contains_key(subject) {
                return Err(Error::Data(format!("subject {subject} has no label")));
            }
            for rec in recs.values() {
                let c = *channels.entry(rec.modality).or_insert(rec.channels());
                if c != rec.channels() {
                    return Err(Error::Schema(format!(
                        "{subject}/{}: {} channels, expected {c}",
                        rec.modality,
                        rec.channels()
                    )));
                }
                if rec.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "{subject}/{}: non-finite value",
                        rec.modality
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy of the dataset restricted to `keep`.
    pub fn subset<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> Dataset {
        let mut out = Dataset::default();
        for s in keep {
            if let Some(recs) = self.recordings.get(s) {
                out.recordings.insert(s.to_string(), recs.clone());
                if let Some(&l) = self.labels.get(s) {
                    out.labels.insert(s.to_string(), l);
                }
            }
        }
        out
    }
}

/// One window cut from a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub subject_id: String,
    pub modality: Modality,
    /// Start index in the preprocessed recording.
    pub offset: usize,
    pub label: Label,
    /// `omega x channels`
    pub data: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub omega: usize,
    pub stride: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn of_modality(&self, m: Modality) -> Vec<&Window> {
        self.windows.iter().filter(|w| w.modality == m).collect()
    }

    pub fn filter(&self, mut keep: impl FnMut(&Window) -> bool) -> WindowSet {
        WindowSet {
            windows: self.windows.iter().filter(|w| keep(w)).cloned().collect(),
            omega: self.omega,
            stride: self.stride,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_threshold() {
        assert_eq!(derive_label(6).unwrap(), 1);
        assert_eq!(derive_label(5).unwrap(), 0);
        assert_eq!(derive_label(0).unwrap(), 0);
        assert_eq!(derive_label(10).unwrap(), 1);
        assert!(matches!(derive_label(11), Err(Error::Argument(_))));
        assert!(matches!(derive_label(-1), Err(Error::Argument(_))));
    }

    #[test]
    fn modality_names_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        assert!("EMG".parse::<Modality>().is_err());
    }

    #[test]
    fn validate_flags_missing_label() {
        let mut ds = Dataset::default();
        ds.insert(Recording {
            subject_id: "a".into(),
            modality: Modality::Semg,
            data: Array2::zeros((3, 4)),
            sample_rate_hz: 60.0,
            pain_intensity: None,
        });
        assert!(matches!(ds.validate(), Err(Error::Data(_))));
        ds.set_label("a", 1).unwrap();
        ds.validate().unwrap();
        assert!(ds.set_label("b", 0).is_err());
    }
}
