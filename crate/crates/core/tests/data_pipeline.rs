use std::collections::BTreeMap;

use spikeforge::data::{
    load_csv, make_windows, preprocess, synthesize_dataset, write_csv, ChannelSchema, Label,
    Modality, PrepConfig,
};
use spikeforge::rng::Rng;

#[test]
fn synthetic_export_round_trips() {
    let ds = synthesize_dataset(2, 1, 100, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path, &ChannelSchema::reference()).unwrap();
    assert_eq!(back.n_recordings(), 6);
    assert_eq!(back.labels, ds.labels);
    for rec in ds.iter_recordings() {
        let other = back.recording(&rec.subject_id, rec.modality).unwrap();
        assert_eq!(other.data, rec.data);
    }
}

#[test]
fn shuffled_rows_parse_identically() {
    let ds = synthesize_dataset(2, 1, 30, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sorted = dir.path().join("sorted.csv");
    write_csv(&ds, &sorted).unwrap();
    let text = std::fs::read_to_string(&sorted).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    Rng::new(5).shuffle(&mut lines);
    let shuffled = dir.path().join("shuffled.csv");
    std::fs::write(&shuffled, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    let schema = ChannelSchema::reference();
    let a = load_csv(&sorted, &schema).unwrap();
    let b = load_csv(&shuffled, &schema).unwrap();
    assert_eq!(a, b);
    for rec in a.iter_recordings() {
        let other = b.recording(&rec.subject_id, rec.modality).unwrap();
        let bits = |m: &ndarray::Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&rec.data), bits(&other.data));
    }
}

/// Plain gradient-descent logistic regression on standardised features.
fn logistic_probe(x: &[Vec<f64>], y: &[Label], test: &[Vec<f64>]) -> Vec<Label> {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            v.sqrt().max(1e-12)
        })
        .collect();
    let z = |r: &[f64]| -> Vec<f64> { (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = x.iter().map(|r| z(r)).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..2000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &t) in xs.iter().zip(y) {
            let s = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-s).exp()) - f64::from(t);
            for j in 0..d {
                gw[j] += err * r[j] / n;
            }
            gb += err / n;
        }
        for j in 0..d {
            w[j] -= 0.5 * gw[j];
        }
        b -= 0.5 * gb;
    }
    test.iter()
        .map(|r| {
            let s = b + z(r).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            Label::from(s > 0.0)
        })
        .collect()
}

#[test]
fn generator_is_linearly_separable_on_window_means() {
    let ds = synthesize_dataset(20, 7, 6000, 1).unwrap();
    let ds = preprocess(
        &ds,
        &PrepConfig {
            omega: 50,
            ..PrepConfig::default()
        },
    )
    .unwrap();
    let ws = make_windows(&ds, 50, 50).unwrap();
    // one feature per channel: the window mean, all modalities side by side
    let mut rows: BTreeMap<(String, usize), (Label, Vec<f64>)> = BTreeMap::new();
    for m in Modality::ALL {
        for w in ws.of_modality(m) {
            let entry = rows
                .entry((w.subject_id.clone(), w.offset))
                .or_insert_with(|| (w.label, Vec::new()));
            entry.1.extend(w.data.mean_axis(ndarray::Axis(0)).unwrap());
        }
    }
    let subjects: Vec<String> = ds.subjects().map(String::from).collect();
    // held-out subjects: train on even-indexed, test on odd-indexed, then swap
    let mut correct = 0;
    let mut total = 0;
    for parity in 0..2 {
        let test_subject = |s: &str| subjects.iter().position(|x| x == s).unwrap() % 2 == parity;
        let (mut x, mut y, mut tx, mut ty) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ((s, _), (label, feats)) in &rows {
            if test_subject(s) {
                tx.push(feats.clone());
                ty.push(*label);
            } else {
                x.push(feats.clone());
                y.push(*label);
            }
        }
        let pred = logistic_probe(&x, &y, &tx);
        correct += pred.iter().zip(&ty).filter(|(p, t)| p == t).count();
        total += ty.len();
    }
    let acc = correct as f64 / total as f64;
    println!("held-out linear probe accuracy {acc:.3}");
    assert!(acc >= 0.85, "held-out linear probe accuracy {acc:.3}");
}
