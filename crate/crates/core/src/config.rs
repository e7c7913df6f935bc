//! Run configuration: one JSON document covering every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{PrepConfig, SynthConfig};
use crate::encoders::{EncoderKind, StalConfig};
use crate::ensemble::{EnsembleConfig, ForestConfig};
use crate::error::{Error, Result};
use crate::objective::StalTrainConfig;
use crate::persist::sha256_hex;
use crate::srnn::{SrnnConfig, SrnnTrainConfig};

pub const SEED_ENV: &str = "SPIKEFORGE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Small windows and networks; runs in minutes.
    #[default]
    Desk,
    /// Full-size windows and networks.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::arg(format!("unknown profile {s:?} (desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub synth: SynthConfig,
    pub prep: PrepConfig,
    /// Encoders compared by a LOSO run.
    pub encoders: Vec<EncoderKind>,
    pub stal: StalConfig,
    pub stal_train: StalTrainConfig,
    pub srnn: SrnnConfig,
    pub srnn_train: SrnnTrainConfig,
    pub forest: ForestConfig,
    /// LOSO worker threads; 0 uses all cores.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let base = Self {
            profile,
            seed: 1,
            synth: SynthConfig::default(),
            prep: PrepConfig::default(),
            encoders: vec![EncoderKind::StalStacked],
            stal: StalConfig::default(),
            stal_train: StalTrainConfig::default(),
            srnn: SrnnConfig::default(),
            srnn_train: SrnnTrainConfig::default(),
            forest: ForestConfig::default(),
            workers: 0,
        };
        match profile {
            Profile::Paper => Self {
                prep: PrepConfig {
                    pad_to: Some(17_995),
                    ..PrepConfig::default()
                },
                synth: SynthConfig {
                    n_subjects: 46,
                    n_positive: 12,
                    length: 17_995,
                    ..SynthConfig::default()
                },
                ..base
            },
            Profile::Desk => Self {
                prep: PrepConfig {
                    omega: 50,
                    ..PrepConfig::default()
                },
                synth: SynthConfig {
                    n_subjects: 8,
                    n_positive: 3,
                    length: 600,
                    ..SynthConfig::default()
                },
                srnn: SrnnConfig {
                    n_hidden: 64,
                    ..SrnnConfig::default()
                },
                ..base
            },
        }
    }

    /// Parse a JSON document over the defaults of the profile it names.
    pub fn from_json(text: &str) -> Result<Self> {
        let overrides: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &overrides else {
            return Err(Error::Schema("config must be a JSON object".into()));
        };
        let profile = match map.get("profile") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Schema(format!("profile: {e}")))?,
            None => Profile::Desk,
        };
        let mut merged = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut merged, overrides);
        let cfg: Self =
            serde_json::from_value(merged).map_err(|e| Error::Schema(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Apply `SPIKEFORGE_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::arg(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.prep.omega == 0 || self.prep.stride() == 0 {
            return Err(Error::arg("omega and stride must be positive"));
        }
        if self.stal.psi == 0 || self.srnn.tau == 0 || self.srnn.n_hidden == 0 {
            return Err(Error::arg("psi, tau and hidden size must be positive"));
        }
        if self.encoders.is_empty() {
            return Err(Error::arg("at least one encoder must be listed"));
        }
        self.stal_train.validate()?;
        if self.srnn_train.lr < 0.0 || self.srnn_train.weight_decay < 0.0 {
            return Err(Error::arg(
                "classifier learning rate and decay must be non-negative",
            ));
        }
        if self.forest.n_trees == 0 {
            return Err(Error::arg("forest needs at least one tree"));
        }
        Ok(())
    }

    pub fn ensemble(&self, encoder: EncoderKind) -> EnsembleConfig {
        EnsembleConfig {
            encoder,
            stal: self.stal.clone(),
            stal_train: self.stal_train.clone(),
            srnn: self.srnn.clone(),
            srnn_train: self.srnn_train.clone(),
            forest: self.forest.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        let desk = RunConfig::default();
        assert_eq!(desk.prep.omega, 50);
        assert_eq!(desk.srnn.n_hidden, 64);
        assert_eq!(desk.stal.psi, 5);
        assert_eq!(desk.srnn.tau, 5);
        assert_eq!(desk.synth.n_subjects, 8);
        let paper = RunConfig::for_profile(Profile::Paper);
        assert_eq!(paper.prep.omega, 3000);
        assert_eq!(paper.srnn.n_hidden, 500);
    }

    #[test]
    fn partial_documents_merge_over_profile() {
        let c = RunConfig::from_json(r#"{"profile":"paper","stal":{"alpha":10.0}}"#).unwrap();
        assert_eq!(c.profile, Profile::Paper);
        assert_eq!(c.stal.alpha, 10.0);
        assert_eq!(c.stal.psi, 5);
        assert_eq!(c.srnn.n_hidden, 500);
        let d = RunConfig::from_json("{}").unwrap();
        assert_eq!(d, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_json(r#"{"bogus":1}"#),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"stal":{"psy":3}}"#),
            Err(Error::Schema(_))
        ));
        assert!(RunConfig::from_json(r#"{"prep":{"omega":0}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        let back = RunConfig::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
