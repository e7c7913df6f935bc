use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;
use spikeforge::data::{Label, Modality, Window, WindowSet};
use spikeforge::eval::{loso_run, FoldPredictions, FoldTrainer, LosoConfig, WindowOutcome};
use spikeforge::rng::Rng;
use spikeforge::Result;

fn windows(labels: &[Label], per_subject: usize) -> WindowSet {
    let mut out = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        for k in 0..per_subject {
            for m in Modality::ALL {
                out.push(Window {
                    subject_id: format!("S{:02}", i + 1),
                    modality: m,
                    offset: k * 4,
                    label,
                    data: Array2::from_elem((4, 2), label as f64 + k as f64),
                });
            }
        }
    }
    WindowSet {
        windows: out,
        omega: 4,
        stride: 4,
    }
}

/// Reads the label straight off the window.
struct Oracle;

impl FoldTrainer for Oracle {
    type Model = ();

    fn train(&self, _: &WindowSet, _: u64) -> Result<()> {
        Ok(())
    }

    fn predict(&self, _: &(), test: &WindowSet) -> Result<FoldPredictions> {
        Ok(FoldPredictions {
            windows: test
                .of_modality(Modality::Semg)
                .into_iter()
                .map(|w| WindowOutcome {
                    offset: w.offset,
                    label: w.label,
                    pred: w.label,
                })
                .collect(),
            densities: Some([0.1, 0.2, 0.3]),
        })
    }
}

/// Seed-dependent coin flips, recording what each fold saw.
#[derive(Default)]
struct Spy {
    seen: Mutex<Vec<(BTreeSet<String>, u64)>>,
    trained: AtomicUsize,
}

impl FoldTrainer for Spy {
    type Model = u64;

    fn train(&self, train: &WindowSet, seed: u64) -> Result<u64> {
        let subjects = train.windows.iter().map(|w| w.subject_id.clone()).collect();
        self.seen.lock().unwrap().push((subjects, seed));
        self.trained.fetch_add(1, Ordering::SeqCst);
        Ok(seed)
    }

    fn predict(&self, seed: &u64, test: &WindowSet) -> Result<FoldPredictions> {
        let mut rng = Rng::new(*seed);
        let mut ws: Vec<&Window> = test.of_modality(Modality::Semg);
        ws.sort_by_key(|w| w.offset);
        Ok(FoldPredictions {
            windows: ws
                .into_iter()
                .map(|w| WindowOutcome {
                    offset: w.offset,
                    label: w.label,
                    pred: rng.below(2) as Label,
                })
                .collect(),
            densities: None,
        })
    }
}

fn cfg(seed: u64) -> LosoConfig {
    LosoConfig {
        seed,
        workers: 2,
        checkpoint_dir: None,
        checkpoint_key: String::new(),
    }
}

#[test]
fn pass_through_scores_perfectly() {
    let ws = windows(&[0, 1, 0, 1, 1, 0], 3);
    let r = loso_run(&ws, &Oracle, &cfg(1), "oracle").unwrap();
    assert_eq!(r.n_folds, 6);
    assert_eq!(r.subject.metrics.accuracy, 1.0);
    assert_eq!(r.subject.metrics.auc, 1.0);
    assert_eq!(r.window.metrics.accuracy, 1.0);
    let d = r.densities.unwrap();
    assert!((d.semg - 0.1).abs() < 1e-12 && (d.energy - 0.3).abs() < 1e-12);
}

#[test]
fn folds_never_see_their_subject() {
    let ws = windows(&[0, 1, 0, 1, 0], 2);
    let spy = Spy::default();
    loso_run(&ws, &spy, &cfg(1), "spy").unwrap();
    let seen = spy.seen.lock().unwrap();
    assert_eq!(seen.len(), 5);
    let all: BTreeSet<String> = (1..=5).map(|i| format!("S{i:02}")).collect();
    let mut held_out = BTreeSet::new();
    for (subjects, _) in seen.iter() {
        assert_eq!(subjects.len(), 4);
        let missing: Vec<_> = all.difference(subjects).cloned().collect();
        assert_eq!(missing.len(), 1);
        held_out.insert(missing[0].clone());
    }
    assert_eq!(held_out, all);
}

#[test]
fn report_ignores_subject_order() {
    let ws = windows(&[0, 1, 1, 0, 0, 1, 0], 5);
    let base = loso_run(&ws, &Spy::default(), &cfg(7), "spy").unwrap();
    let mut rng = Rng::new(2);
    for _ in 0..3 {
        let mut shuffled = ws.clone();
        rng.shuffle(&mut shuffled.windows);
        let r = loso_run(&shuffled, &Spy::default(), &cfg(7), "spy").unwrap();
        assert_eq!(r.to_json().unwrap(), base.to_json().unwrap());
    }
    let other = loso_run(&ws, &Spy::default(), &cfg(8), "spy").unwrap();
    assert_ne!(other.folds, base.folds);
}

#[test]
fn checkpoints_resume_and_respect_key() {
    let dir = tempfile::tempdir().unwrap();
    let ws = windows(&[0, 1, 0, 1], 2);
    let mut c = cfg(3);
    c.checkpoint_dir = Some(dir.path().to_path_buf());
    c.checkpoint_key = "a".into();
    let spy = Spy::default();
    let first = loso_run(&ws, &spy, &c, "spy").unwrap();
    assert_eq!(spy.trained.load(Ordering::SeqCst), 4);
    // drop one fold as if interrupted
    std::fs::remove_file(dir.path().join("fold_S02.json")).unwrap();
    let spy = Spy::default();
    let resumed = loso_run(&ws, &spy, &c, "spy").unwrap();
    assert_eq!(spy.trained.load(Ordering::SeqCst), 1);
    assert_eq!(resumed, first);
    c.checkpoint_key = "b".into();
    let spy = Spy::default();
    loso_run(&ws, &spy, &c, "spy").unwrap();
    assert_eq!(spy.trained.load(Ordering::SeqCst), 4);
}

#[test]
fn degenerate_sets_rejected() {
    assert!(loso_run(&windows(&[0, 0, 0], 1), &Oracle, &cfg(1), "x").is_err());
    assert!(loso_run(&windows(&[1], 1), &Oracle, &cfg(1), "x").is_err());
}
