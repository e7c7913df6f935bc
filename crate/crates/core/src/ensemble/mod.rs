//! Per-modality encoder + classifier pipelines fused by a random forest.

mod bundle;
mod forest;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Label, Modality, Window, WindowSet};
use crate::encoders::{
    latency_encode, position_weights, rate_encode, EncoderKind, SpikeTrain, StalConfig, StalModel,
    StalVariant,
};
use crate::error::{Error, Result};
use crate::objective::{train_stal_on, LossHistory, StalTrainConfig};
use crate::rng::{derive_seed, hash_str};
use crate::srnn::{
    argmax, input_width, train_srnn, SrnnConfig, SrnnHistory, SrnnModel, SrnnTrainConfig, N_CLASSES,
};

pub use bundle::{load_bundle, save_bundle, BundleManifest, BUNDLE_FORMAT, MANIFEST_FILE};
pub use forest::{gini, ForestConfig, ForestModel, Node, Tree, FOREST_FORMAT};

pub const ENCODER_FORMAT: &str = "spikeforge.encoder";
pub const N_META_FEATURES: usize = 2 * 3;

/// A fitted spike encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Encoder {
    Stal(StalModel),
    Rate { psi: usize, seed: u64 },
    Latency { psi: usize },
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Stal(m) => match m.variant {
                StalVariant::Stacked => EncoderKind::StalStacked,
                StalVariant::Vanilla => EncoderKind::StalVanilla,
            },
            Encoder::Rate { .. } => EncoderKind::Rate,
            Encoder::Latency { .. } => EncoderKind::Latency,
        }
    }

    pub fn psi(&self) -> usize {
        match self {
            Encoder::Stal(m) => m.psi,
            Encoder::Rate { psi, .. } | Encoder::Latency { psi } => *psi,
        }
    }

    pub fn position_weights(&self) -> Vec<f64> {
        match self {
            Encoder::Stal(m) => m.position_weights.clone(),
            _ => position_weights(self.psi()),
        }
    }

    /// Encode windows; `streams` seed the stochastic rate encoder per window.
    pub fn encode_batch(
        &self,
        windows: &[&Array2<f64>],
        streams: &[u64],
    ) -> Result<Vec<SpikeTrain>> {
        match self {
            Encoder::Stal(m) => m.encode_batch(windows),
            Encoder::Rate { psi, seed } => windows
                .iter()
                .zip(streams)
                .map(|(w, &s)| rate_encode(w, *psi, derive_seed(*seed, &[s])))
                .collect(),
            Encoder::Latency { psi } => windows.iter().map(|w| latency_encode(w, *psi)).collect(),
        }
    }
}

/// Per-window random stream, fixed by subject, modality and offset.
pub fn window_stream(w: &Window) -> u64 {
    derive_seed(
        hash_str(&w.subject_id),
        &[w.modality.index() as u64, w.offset as u64],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityPipeline {
    pub modality: Modality,
    pub encoder: Encoder,
    pub srnn: SrnnModel,
}

/// Encoded windows of one pipeline.
pub struct PipelineOutput {
    /// `n x 2` class probabilities.
    pub proba: Array2<f64>,
    pub spikes: usize,
    pub slots: usize,
}

impl PipelineOutput {
    pub fn density(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.spikes as f64 / self.slots as f64
        }
    }
}

fn scaled_inputs(trains: &[SpikeTrain], weights: &[f64]) -> Vec<Vec<f64>> {
    trains.iter().map(|t| t.b_hat_scaled(weights)).collect()
}

impl ModalityPipeline {
    pub fn run(&self, windows: &[&Window]) -> Result<PipelineOutput> {
        if let Some(w) = windows.iter().find(|w| w.modality != self.modality) {
            return Err(Error::Data(format!(
                "{} window passed to the {} pipeline",
                w.modality, self.modality
            )));
        }
        let data: Vec<&Array2<f64>> = windows.iter().map(|w| &w.data).collect();
        let streams: Vec<u64> = windows.iter().map(|w| window_stream(w)).collect();
        let trains = self.encoder.encode_batch(&data, &streams)?;
        let inputs = scaled_inputs(&trains, &self.encoder.position_weights());
        let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        Ok(PipelineOutput {
            proba: self.srnn.predict_proba_batch(&refs)?,
            spikes: trains.iter().map(|t| t.spike_count()).sum(),
            slots: trains.iter().map(|t| t.slots()).sum(),
        })
    }
}

/// Softmax class probabilities of one pipeline for one window.
pub fn pipeline_predict(p: &ModalityPipeline, window: &Array2<f64>) -> Result<Array1<f64>> {
    let trains = p.encoder.encode_batch(&[window], &[0])?;
    let input = trains[0].b_hat_scaled(&p.encoder.position_weights());
    p.srnn.predict_proba(&input)
}

/// `(sEMG0, sEMG1, Angle0, Angle1, Energy0, Energy1)` from per-modality
/// probability pairs.
pub fn meta_vector(probs: &BTreeMap<Modality, [f64; 2]>) -> Result<[f64; N_META_FEATURES]> {
    let mut out = [0.0; N_META_FEATURES];
    for m in Modality::ALL {
        let p = probs
            .get(&m)
            .ok_or_else(|| Error::Data(format!("no {m} output for meta-features")))?;
        out[2 * m.index()] = p[0];
        out[2 * m.index() + 1] = p[1];
    }
    Ok(out)
}

/// Meta-features of one window triple, evaluating each modality's pipeline.
pub fn build_meta_features(
    pipelines: &[ModalityPipeline],
    triple: &BTreeMap<Modality, &Array2<f64>>,
) -> Result<[f64; N_META_FEATURES]> {
    let mut probs = BTreeMap::new();
    for m in Modality::ALL {
        let p = pipelines
            .iter()
            .find(|p| p.modality == m)
            .ok_or_else(|| Error::Data(format!("no {m} pipeline")))?;
        let w = triple
            .get(&m)
            .ok_or_else(|| Error::Data(format!("window triple lacks {m}")))?;
        let pr = pipeline_predict(p, w)?;
        probs.insert(m, [pr[0], pr[1]]);
    }
    meta_vector(&probs)
}

/// The three modality windows cut at one (subject, offset).
#[derive(Debug, Clone)]
pub struct WindowTriple<'a> {
    pub subject_id: &'a str,
    pub offset: usize,
    pub label: Label,
    /// Indexed by [`Modality::index`].
    pub windows: [&'a Window; 3],
}

/// Group windows into complete (subject, offset) triples, in subject/offset order.
pub fn group_triples(ws: &WindowSet) -> Result<Vec<WindowTriple<'_>>> {
    let mut groups: BTreeMap<(&str, usize), [Option<&Window>; 3]> = BTreeMap::new();
    for w in &ws.windows {
        let slot =
            &mut groups.entry((w.subject_id.as_str(), w.offset)).or_default()[w.modality.index()];
        if slot.is_some() {
            return Err(Error::Duplicate(format!(
                "two {} windows for {} at offset {}",
                w.modality, w.subject_id, w.offset
            )));
        }
        *slot = Some(w);
    }
    groups
        .into_iter()
        .map(|((subject, offset), slots)| {
            let mut out = Vec::with_capacity(3);
            for (m, s) in Modality::ALL.into_iter().zip(slots) {
                out.push(s.ok_or_else(|| {
                    Error::Data(format!(
                        "subject {subject} offset {offset} has no {m} window"
                    ))
                })?);
            }
            Ok(WindowTriple {
                subject_id: subject,
                offset,
                label: out[0].label,
                windows: [out[0], out[1], out[2]],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub encoder: EncoderKind,
    pub stal: StalConfig,
    pub stal_train: StalTrainConfig,
    pub srnn: SrnnConfig,
    pub srnn_train: SrnnTrainConfig,
    pub forest: ForestConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::StalStacked,
            stal: StalConfig::default(),
            stal_train: StalTrainConfig::default(),
            srnn: SrnnConfig::default(),
            srnn_train: SrnnTrainConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    /// One pipeline per modality, in [`Modality::ALL`] order.
    pub pipelines: Vec<ModalityPipeline>,
    pub forest: ForestModel,
    pub seed: u64,
}

/// Training curves of one modality pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineHistory {
    pub modality: Modality,
    pub stal: Option<LossHistory>,
    pub srnn: SrnnHistory,
}

/// Outcome of the ensemble on one window triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub subject_id: String,
    pub offset: usize,
    pub label: Label,
    pub meta: [f64; N_META_FEATURES],
    /// Per-modality argmax, in [`Modality::ALL`] order.
    pub modality_pred: [Label; 3],
    pub pred: Label,
}

/// Ensemble predictions plus per-modality spike densities.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub predictions: Vec<WindowPrediction>,
    /// Indexed by [`Modality::index`].
    pub densities: [f64; 3],
}

/// Fit the encoder of one modality; rate and latency coding have nothing to
/// learn and are built directly.
pub fn fit_encoder(
    windows: &[&Window],
    modality: Modality,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<(Encoder, Option<LossHistory>)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::arg(format!("no {modality} training windows")))?;
    let (omega, channels) = first.data.dim();
    Ok(match cfg.encoder {
        EncoderKind::StalStacked | EncoderKind::StalVanilla => {
            let stal_cfg = StalConfig {
                variant: if cfg.encoder == EncoderKind::StalStacked {
                    StalVariant::Stacked
                } else {
                    StalVariant::Vanilla
                },
                ..cfg.stal.clone()
            };
            let data: Vec<&Array2<f64>> = windows.iter().map(|w| &w.data).collect();
            let model = StalModel::new(&stal_cfg, omega, channels, derive_seed(seed, &[1]))?;
            let (model, hist) = train_stal_on(
                model,
                &data,
                &cfg.stal_train,
                cfg.stal_train.batch_size.get(modality),
                derive_seed(seed, &[2]),
            )?;
            (Encoder::Stal(model), Some(hist))
        }
        EncoderKind::Rate => (
            Encoder::Rate {
                psi: cfg.stal.psi,
                seed: derive_seed(seed, &[3]),
            },
            None,
        ),
        EncoderKind::Latency => (Encoder::Latency { psi: cfg.stal.psi }, None),
    })
}

/// Train a classifier on the spike trains `encoder` produces for `windows`.
pub fn fit_classifier(
    windows: &[&Window],
    modality: Modality,
    encoder: &Encoder,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<(SrnnModel, SrnnHistory)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::arg(format!("no {modality} training windows")))?;
    let (omega, channels) = first.data.dim();
    let data: Vec<&Array2<f64>> = windows.iter().map(|w| &w.data).collect();
    let labels: Vec<Label> = windows.iter().map(|w| w.label).collect();
    let streams: Vec<u64> = windows.iter().map(|w| window_stream(w)).collect();
    let trains = encoder.encode_batch(&data, &streams)?;
    let inputs = scaled_inputs(&trains, &encoder.position_weights());
    let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let mut srnn = SrnnModel::new(
        &cfg.srnn,
        input_width(omega * channels, cfg.srnn.tau),
        derive_seed(seed, &[4]),
    )?;
    let probe = srnn.prepare(&refs[..refs.len().min(256)])?;
    srnn.calibrate_input_scale(probe.view())?;
    train_srnn(
        srnn,
        &refs,
        &labels,
        &cfg.srnn_train,
        cfg.srnn_train.batch_size.get(modality),
        derive_seed(seed, &[5]),
    )
}

/// Fit one modality's encoder (if trainable) then its classifier.
pub fn train_pipeline(
    windows: &[&Window],
    modality: Modality,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<(ModalityPipeline, PipelineHistory)> {
    let (encoder, stal_hist) = fit_encoder(windows, modality, cfg, seed)?;
    let (srnn, srnn_hist) = fit_classifier(windows, modality, &encoder, cfg, seed)?;
    Ok((
        ModalityPipeline {
            modality,
            encoder,
            srnn,
        },
        PipelineHistory {
            modality,
            stal: stal_hist,
            srnn: srnn_hist,
        },
    ))
}

/// Train the three pipelines on the given windows, then the forest on their
/// outputs for the same windows.
pub fn ensemble_train(
    windows: &WindowSet,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<(Ensemble, Vec<PipelineHistory>)> {
    let triples = group_triples(windows)?;
    if triples.is_empty() {
        return Err(Error::arg("no training windows"));
    }
    let fitted: Vec<(ModalityPipeline, PipelineHistory)> = Modality::ALL
        .par_iter()
        .map(|&m| {
            let ws: Vec<&Window> = triples.iter().map(|t| t.windows[m.index()]).collect();
            train_pipeline(&ws, m, cfg, derive_seed(seed, &[10 + m.index() as u64]))
        })
        .collect::<Result<_>>()?;
    let (pipelines, histories): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let meta = meta_matrix(&pipelines, &triples)?.0;
    let labels: Vec<Label> = triples.iter().map(|t| t.label).collect();
    let forest = ForestModel::fit(meta.view(), &labels, &cfg.forest, derive_seed(seed, &[20]))?;
    Ok((
        Ensemble {
            pipelines,
            forest,
            seed,
        },
        histories,
    ))
}

fn meta_matrix(
    pipelines: &[ModalityPipeline],
    triples: &[WindowTriple<'_>],
) -> Result<(Array2<f64>, [PipelineOutput; 3])> {
    let outputs: Vec<PipelineOutput> = pipelines
        .iter()
        .map(|p| {
            let ws: Vec<&Window> = triples
                .iter()
                .map(|t| t.windows[p.modality.index()])
                .collect();
            p.run(&ws)
        })
        .collect::<Result<_>>()?;
    let outputs: [PipelineOutput; 3] = outputs
        .try_into()
        .map_err(|_| Error::Data("ensemble needs exactly three pipelines".into()))?;
    let mut meta = Array2::zeros((triples.len(), N_META_FEATURES));
    for (p, out) in pipelines.iter().zip(&outputs) {
        let col = 2 * p.modality.index();
        for r in 0..triples.len() {
            for k in 0..N_CLASSES {
                meta[[r, col + k]] = out.proba[[r, k]];
            }
        }
    }
    Ok((meta, outputs))
}

impl Ensemble {
    pub fn validate(&self) -> Result<()> {
        if self.pipelines.len() != 3
            || self
                .pipelines
                .iter()
                .zip(Modality::ALL)
                .any(|(p, m)| p.modality != m)
        {
            return Err(Error::Data(
                "ensemble needs one pipeline per modality in canonical order".into(),
            ));
        }
        for p in &self.pipelines {
            p.srnn.validate()?;
            if let Encoder::Stal(m) = &p.encoder {
                m.validate()?;
                if input_width(m.width(), p.srnn.tau) != p.srnn.d_in {
                    return Err(Error::shape(format!(
                        "{} encoder output does not fit the classifier input",
                        p.modality
                    )));
                }
            }
        }
        if self.forest.n_features != N_META_FEATURES {
            return Err(Error::shape("forest must take six meta-features"));
        }
        self.forest.validate()
    }

    /// Predict every complete window triple of `windows`.
    pub fn evaluate(&self, windows: &WindowSet) -> Result<EnsembleOutput> {
        let triples = group_triples(windows)?;
        let (meta, outputs) = meta_matrix(&self.pipelines, &triples)?;
        let mut predictions = Vec::with_capacity(triples.len());
        for (r, t) in triples.iter().enumerate() {
            let row = meta.row(r);
            let mut feats = [0.0; N_META_FEATURES];
            feats.iter_mut().zip(row.iter()).for_each(|(d, &v)| *d = v);
            let modality_pred = [0, 1, 2].map(|m| argmax(outputs[m].proba.row(r)));
            predictions.push(WindowPrediction {
                subject_id: t.subject_id.to_string(),
                offset: t.offset,
                label: t.label,
                meta: feats,
                modality_pred,
                pred: self.forest.predict(row)?,
            });
        }
        Ok(EnsembleOutput {
            predictions,
            densities: [0, 1, 2].map(|m| outputs[m].density()),
        })
    }
}
