//! Metrics, spike densities and leave-one-subject-out evaluation.

mod loso;
mod metrics;

pub use loso::{
    comparison_csv, comparison_gnuplot, comparison_table, comparison_text, loso_run, subject_vote,
    summarize, DensityReport, EnsembleTrainer, EvalReport, FoldPredictions, FoldResult,
    FoldTrainer, LevelReport, LosoConfig, WindowOutcome, COMPARISON_HEADER,
};
pub use metrics::{
    auc, confusion, ensemble_density, mcc, metrics, spike_density, ConfusionCounts, Metrics,
};
