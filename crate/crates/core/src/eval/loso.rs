//! Leave-one-subject-out harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, ensemble_density, metrics, ConfusionCounts, Metrics};
use crate::data::{Label, WindowSet};
use crate::ensemble::{ensemble_train, Ensemble, EnsembleConfig};
use crate::error::{Error, Result};
use crate::persist::write_atomic;
use crate::rng::{derive_seed, hash_str};

/// Prediction for one held-out window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub offset: usize,
    pub label: Label,
    pub pred: Label,
}

/// What a trained fold model says about the held-out subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPredictions {
    pub windows: Vec<WindowOutcome>,
    /// Spike densities on the held-out windows, in `Modality::ALL` order.
    pub densities: Option<[f64; 3]>,
}

/// A model family the harness can train and apply per fold.
pub trait FoldTrainer: Sync {
    type Model: Send;

    fn train(&self, train: &WindowSet, seed: u64) -> Result<Self::Model>;

    fn predict(&self, model: &Self::Model, test: &WindowSet) -> Result<FoldPredictions>;
}

/// The full encoder + classifier + forest ensemble.
pub struct EnsembleTrainer {
    pub config: EnsembleConfig,
}

impl FoldTrainer for EnsembleTrainer {
    type Model = Ensemble;

    fn train(&self, train: &WindowSet, seed: u64) -> Result<Ensemble> {
        Ok(ensemble_train(train, &self.config, seed)?.0)
    }

    fn predict(&self, model: &Ensemble, test: &WindowSet) -> Result<FoldPredictions> {
        let out = model.evaluate(test)?;
        Ok(FoldPredictions {
            windows: out
                .predictions
                .iter()
                .map(|p| WindowOutcome {
                    offset: p.offset,
                    label: p.label,
                    pred: p.pred,
                })
                .collect(),
            densities: Some(out.densities),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject_id: String,
    pub label: Label,
    pub n_windows: usize,
    pub windows_correct: usize,
    /// Fraction of windows predicted positive; the subject's AUC score.
    pub positive_fraction: f64,
    /// Majority vote over windows, ties to 0.
    pub pred: Label,
    pub densities: Option<[f64; 3]>,
    pub windows: Vec<WindowOutcome>,
}

/// Per-modality mean densities over folds and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    #[serde(rename = "sEMG")]
    pub semg: f64,
    #[serde(rename = "Angle")]
    pub angle: f64,
    #[serde(rename = "Energy")]
    pub energy: f64,
    pub ensemble: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub confusion: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub n_folds: usize,
    /// Subject-level results (primary).
    pub subject: LevelReport,
    /// Window-level results (diagnostic).
    pub window: LevelReport,
    pub densities: Option<DensityReport>,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoConfig {
    pub seed: u64,
    /// Worker threads for folds; 0 lets the pool decide.
    pub workers: usize,
    /// Completed folds are stored here and reused on the next run.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoints from a different key are ignored.
    pub checkpoint_key: String,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    key: String,
    fold: FoldResult,
}

fn checkpoint_path(dir: &Path, subject: &str) -> PathBuf {
    dir.join(format!("fold_{subject}.json"))
}

fn load_checkpoint(cfg: &LosoConfig, subject: &str) -> Option<FoldResult> {
    let dir = cfg.checkpoint_dir.as_ref()?;
    let text = std::fs::read_to_string(checkpoint_path(dir, subject)).ok()?;
    let cp: Checkpoint = serde_json::from_str(&text).ok()?;
    (cp.key == cfg.checkpoint_key && cp.fold.subject_id == subject).then_some(cp.fold)
}

/// Majority vote with ties to the negative class.
pub fn subject_vote(preds: &[Label]) -> Label {
    let pos = preds.iter().filter(|&&p| p == 1).count();
    Label::from(2 * pos > preds.len())
}

fn run_fold<T: FoldTrainer>(
    windows: &WindowSet,
    subject: &str,
    trainer: &T,
    cfg: &LosoConfig,
) -> Result<FoldResult> {
    if let Some(done) = load_checkpoint(cfg, subject) {
        log::info!("fold {subject}: reusing checkpoint");
        return Ok(done);
    }
    let train = windows.filter(|w| w.subject_id != subject);
    let test = windows.filter(|w| w.subject_id == subject);
    if train.windows.iter().any(|w| w.subject_id == subject) {
        return Err(Error::State(format!(
            "held-out subject {subject} leaked into training"
        )));
    }
    let model = trainer.train(&train, derive_seed(cfg.seed, &[hash_str(subject)]))?;
    drop(train);
    let preds = trainer.predict(&model, &test)?;
    if preds.windows.is_empty() {
        return Err(Error::Data(format!("no predictions for subject {subject}")));
    }
    let label = test.windows[0].label;
    let p: Vec<Label> = preds.windows.iter().map(|w| w.pred).collect();
    let positives = p.iter().filter(|&&x| x == 1).count();
    let fold = FoldResult {
        subject_id: subject.to_string(),
        label,
        n_windows: p.len(),
        windows_correct: preds.windows.iter().filter(|w| w.pred == w.label).count(),
        positive_fraction: positives as f64 / p.len() as f64,
        pred: subject_vote(&p),
        densities: preds.densities,
        windows: preds.windows,
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        let cp = Checkpoint {
            key: cfg.checkpoint_key.clone(),
            fold: fold.clone(),
        };
        write_atomic(
            &checkpoint_path(dir, subject),
            serde_json::to_string_pretty(&cp)?.as_bytes(),
        )?;
    }
    log::info!(
        "fold {subject}: label {} pred {} ({}/{} windows correct)",
        fold.label,
        fold.pred,
        fold.windows_correct,
        fold.n_windows
    );
    Ok(fold)
}

/// Aggregate fold results into a report; independent of fold order.
pub fn summarize(label: &str, mut folds: Vec<FoldResult>) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::arg("no folds to summarise"));
    }
    folds.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let truth: Vec<Label> = folds.iter().map(|f| f.label).collect();
    let pred: Vec<Label> = folds.iter().map(|f| f.pred).collect();
    let scores: Vec<f64> = folds.iter().map(|f| f.positive_fraction).collect();
    let subject_conf = confusion(&pred, &truth)?;
    let subject = LevelReport {
        confusion: subject_conf,
        metrics: metrics(&subject_conf, Some((&scores, &truth)))?,
    };
    let w_truth: Vec<Label> = folds
        .iter()
        .flat_map(|f| f.windows.iter().map(|w| w.label))
        .collect();
    let w_pred: Vec<Label> = folds
        .iter()
        .flat_map(|f| f.windows.iter().map(|w| w.pred))
        .collect();
    let w_scores: Vec<f64> = w_pred.iter().map(|&p| f64::from(p)).collect();
    let window_conf = confusion(&w_pred, &w_truth)?;
    let window = LevelReport {
        confusion: window_conf,
        metrics: metrics(&window_conf, Some((&w_scores, &w_truth)))?,
    };
    let densities = if folds.iter().all(|f| f.densities.is_some()) {
        let mut mean = [0.0; 3];
        for f in &folds {
            for (m, d) in mean.iter_mut().zip(f.densities.expect("checked")) {
                *m += d / folds.len() as f64;
            }
        }
        let [semg, angle, energy] = mean;
        Some(DensityReport {
            semg,
            angle,
            energy,
            ensemble: ensemble_density(semg, energy, angle),
        })
    } else {
        None
    };
    Ok(EvalReport {
        label: label.to_string(),
        n_folds: folds.len(),
        subject,
        window,
        densities,
        folds,
    })
}

/// One fold per subject: train on all others, predict the held-out one.
pub fn loso_run<T: FoldTrainer>(
    windows: &WindowSet,
    trainer: &T,
    cfg: &LosoConfig,
    label: &str,
) -> Result<EvalReport> {
    let subjects: Vec<String> = windows
        .windows
        .iter()
        .map(|w| w.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < 2 {
        return Err(Error::arg(
            "leave-one-subject-out needs at least two subjects",
        ));
    }
    let labels: BTreeMap<&str, Label> = windows
        .windows
        .iter()
        .map(|w| (w.subject_id.as_str(), w.label))
        .collect();
    if labels.values().all(|&l| l == 0) || labels.values().all(|&l| l == 1) {
        return Err(Error::arg("leave-one-subject-out needs both classes"));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    let folds = pool.install(|| {
        subjects
            .par_iter()
            .map(|s| run_fold(windows, s, trainer, cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    summarize(label, folds)
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per fold.
    pub fn folds_csv(&self) -> String {
        let mut s = String::from(
            "subject_id,label,pred,n_windows,windows_correct,positive_fraction,d_semg,d_angle,d_energy\n",
        );
        for f in &self.folds {
            let d = f
                .densities
                .map(|d| format!("{},{},{}", d[0], d[1], d[2]))
                .unwrap_or_else(|| ",,".to_string());
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.subject_id,
                f.label,
                f.pred,
                f.n_windows,
                f.windows_correct,
                f.positive_fraction,
                d
            ));
        }
        s
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_atomic(
            &dir.join(format!("{stem}.json")),
            self.to_json()?.as_bytes(),
        )?;
        write_atomic(
            &dir.join(format!("{stem}_folds.csv")),
            self.folds_csv().as_bytes(),
        )
    }
}

/// Header of [`comparison_table`].
pub const COMPARISON_HEADER: [&str; 9] = [
    "encoder",
    "accuracy",
    "auc",
    "macro_f1",
    "mcc",
    "d_sEMG",
    "d_Energy",
    "d_Angle",
    "d_ensemble",
];

fn density_cells(d: &Option<DensityReport>) -> [String; 4] {
    match d {
        Some(d) => [d.semg, d.energy, d.angle, d.ensemble].map(|v| format!("{v:.3}")),
        None => std::array::from_fn(|_| "-".to_string()),
    }
}

/// Subject-level metrics and densities, one row per report.
pub fn comparison_table(reports: &[EvalReport]) -> Vec<[String; 9]> {
    reports
        .iter()
        .map(|r| {
            let m = &r.subject.metrics;
            let [a, b, c, d] = density_cells(&r.densities);
            [
                r.label.clone(),
                format!("{:.4}", m.accuracy),
                format!("{:.3}", m.auc),
                format!("{:.3}", m.macro_f1),
                format!("{:.3}", m.mcc),
                a,
                b,
                c,
                d,
            ]
        })
        .collect()
}

pub fn comparison_csv(reports: &[EvalReport]) -> String {
    let mut s = COMPARISON_HEADER.join(",");
    s.push('\n');
    for row in comparison_table(reports) {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Whitespace-separated data for gnuplot bar charts (`using 2:xtic(1)` etc.).
pub fn comparison_gnuplot(reports: &[EvalReport]) -> String {
    let mut s = format!("# {}\n", COMPARISON_HEADER.join(" "));
    for row in comparison_table(reports) {
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Fixed-width text rendering of [`comparison_table`].
pub fn comparison_text(reports: &[EvalReport]) -> String {
    let rows = comparison_table(reports);
    let mut widths = COMPARISON_HEADER.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(COMPARISON_HEADER.to_vec());
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
