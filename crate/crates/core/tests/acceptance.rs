//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are always printed.
//! Criteria 9 and 10 train the full desk-profile ensemble three times over
//! 20 subjects and dominate the runtime (about 15 minutes on one core).

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use ndarray::Array2;
use spikeforge::config::{Profile, RunConfig};
use spikeforge::data::{make_windows, preprocess, synthesize_dataset, Label, Modality, WindowSet};
use spikeforge::encoders::{
    collapse_weighted, latency_encode, position_weights, rate_encode, EncoderKind, Mode,
    StalConfig, StalModel,
};
use spikeforge::eval::{
    auc, confusion, ensemble_density, loso_run, mcc, metrics, ConfusionCounts, EnsembleTrainer,
    EvalReport, LosoConfig,
};
use spikeforge::objective::{mutual_information, stal_objective, MiEstimatorConfig};
use spikeforge::rng::Rng;
use spikeforge::srnn::{Firing, SrnnConfig, SrnnModel, SrnnState};

/// Criteria whose check is implemented as stated but cannot pass.
const KNOWN_UNATTAINABLE: &[u32] = &[1];

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Check {
    let rows = [
        ("STAL-Stacked", [0.360, 0.703, 0.793], 0.549),
        ("rate coding", [0.068, 0.584, 0.703], 0.167),
    ];
    let mut notes = Vec::new();
    let mut failed = Vec::new();
    for (name, [a, b, c], printed) in rows {
        let hm = ensemble_density(a, b, c);
        let note = format!("{name} {hm:.4} vs {printed}");
        if (hm - printed).abs() <= 0.001 {
            notes.push(note);
        } else {
            failed.push(note);
        }
    }
    ensure(failed.is_empty(), || {
        format!(
            "{} off by more than 0.001; {}",
            failed.join(", "),
            notes.join(", ")
        )
    })?;
    Ok(notes.join(", "))
}

fn criterion_2() -> Check {
    let ds = synthesize_dataset(3, 1, 300, 4).map_err(|e| e.to_string())?;
    let ds = preprocess(
        &ds,
        &spikeforge::data::PrepConfig {
            omega: 50,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let ws = make_windows(&ds, 50, 50).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for m in Modality::ALL {
        let (mut spikes, mut slots) = (0, 0);
        for w in ws.of_modality(m) {
            let t = latency_encode(&w.data, 5).map_err(|e| e.to_string())?;
            spikes += t.spike_count();
            slots += t.slots();
        }
        let d = spikes as f64 / slots as f64;
        ensure(d == 0.2, || format!("{m} density {d}"))?;
        out.push(format!("{m} {d:.3}"));
    }
    Ok(out.join(", "))
}

fn criterion_3() -> Check {
    let truth: Vec<Label> = (0..46).map(|i| u8::from(i < 12)).collect();
    let pred = vec![0; 46];
    let c = confusion(&pred, &truth).map_err(|e| e.to_string())?;
    let m = metrics(&c, None).map_err(|e| e.to_string())?;
    ensure(m.f1_positive == 0.0 && m.mcc == 0.0, || {
        format!("F1 {} MCC {}", m.f1_positive, m.mcc)
    })?;
    Ok(format!("accuracy {:.4}, F1 0.000, MCC 0.000", m.accuracy))
}

fn stal_loss(model: &StalModel, x: &Array2<f64>) -> f64 {
    let mut rng = Rng::new(0);
    let mi = MiEstimatorConfig::default();
    stal_objective(model, x.view(), Mode::Eval, 1.0, &mi, &mut rng)
        .unwrap()
        .0
        .total
}

fn criterion_4() -> Check {
    let started = Instant::now();
    // STAL: omega 4, c 2, psi 3, eval-mode batchnorm
    let mut model = StalModel::new(
        &StalConfig {
            psi: 3,
            ..StalConfig::default()
        },
        4,
        2,
        21,
    )
    .map_err(|e| e.to_string())?;
    for b in &mut model.blocks {
        b.running_mean.fill(0.1);
        b.running_var.fill(0.5);
    }
    let mut rng = Rng::new(4);
    let x = Array2::from_shape_fn((24, 8), |_| rng.uniform(0.05, 0.95));
    let mut r0 = Rng::new(0);
    let (obj, _) = stal_objective(
        &model,
        x.view(),
        Mode::Eval,
        1.0,
        &MiEstimatorConfig::default(),
        &mut r0,
    )
    .map_err(|e| e.to_string())?;
    let grads: Vec<Vec<f64>> = obj.grads.slices().iter().map(|s| s.to_vec()).collect();
    let h = 1e-6;
    let (mut stal_worst, mut checked, mut kinks) = (0.0f64, 0, 0);
    for (group, g) in grads.iter().enumerate() {
        for idx in 0..g.len() {
            let mut up = model.clone();
            up.params_mut()[group][idx] += h;
            let mut dn = model.clone();
            dn.params_mut()[group][idx] -= h;
            let (lu, l0, ld) = (
                stal_loss(&up, &x),
                stal_loss(&model, &x),
                stal_loss(&dn, &x),
            );
            let fd = (lu - ld) / (2.0 * h);
            let scale = g[idx].abs().max(fd.abs());
            if scale < 1e-7 {
                continue;
            }
            // one-sided slopes disagree where the stencil straddles an L1 kink
            if ((lu - l0) / h - (l0 - ld) / h).abs() > 1e-2 * scale.max(1e-3) {
                kinks += 1;
                continue;
            }
            stal_worst = stal_worst.max((g[idx] - fd).abs() / scale);
            checked += 1;
        }
    }
    // SRNN: d_in 4, n1 3, tau 3, surrogate-smoothed forward
    let mut m = SrnnModel::new(
        &SrnnConfig {
            n_hidden: 3,
            tau: 3,
            ..SrnnConfig::default()
        },
        4,
        7,
    )
    .map_err(|e| e.to_string())?;
    for p in m.params_mut() {
        p.iter_mut().for_each(|w| *w = rng.uniform(-1.0, 1.0));
    }
    let xs = Array2::from_shape_fn((6, 12), |_| rng.next_f64());
    let y: Vec<Label> = vec![0, 1, 1, 0, 1, 0];
    let loss = |m: &SrnnModel| m.loss_and_grads(xs.view(), &y, Firing::Smooth).unwrap().0;
    let (_, sg, _) = m
        .loss_and_grads(xs.view(), &y, Firing::Smooth)
        .map_err(|e| e.to_string())?;
    let sg: Vec<Vec<f64>> = sg.slices().iter().map(|s| s.to_vec()).collect();
    let mut srnn_worst = 0.0f64;
    for (group, g) in sg.iter().enumerate() {
        for idx in 0..g.len() {
            let mut up = m.clone();
            up.params_mut()[group][idx] += h;
            let mut dn = m.clone();
            dn.params_mut()[group][idx] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            srnn_worst = srnn_worst.max((g[idx] - fd).abs() / g[idx].abs().max(fd.abs()).max(1e-8));
        }
    }
    let elapsed = started.elapsed();
    let detail = format!(
        "STAL max rel err {stal_worst:.2e} over {checked} coords ({kinks} at L1 kinks), \
         SRNN max rel err {srnn_worst:.2e}, {elapsed:.1?}"
    );
    ensure(
        stal_worst < 1e-3
            && srnn_worst < 1e-3
            && checked > 100
            && elapsed < Duration::from_secs(60),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn criterion_5() -> Check {
    let mut rng = Rng::new(1);
    let mut worst = 0.0f64;
    let mut resets = 0;
    for _ in 0..100 {
        let beta = rng.uniform(0.5, 0.999);
        let input = rng.uniform(0.0, 1.5);
        let cfg = SrnnConfig {
            n_hidden: 1,
            beta,
            tau: 1,
            ..SrnnConfig::default()
        };
        let mut m = SrnnModel::new(&cfg, 1, 0).map_err(|e| e.to_string())?;
        m.w_in.fill(1.0);
        m.w_rec1.fill(0.0);
        let mut st = SrnnState::zeros(1);
        let mut spikes: Vec<f64> = Vec::new();
        for t in 0..60 {
            let (prev_u, prev_s) = (st.u1[0], st.s1[0]);
            st = m
                .rlif_step(&st, ndarray::array![input].view())
                .map_err(|e| e.to_string())?;
            let drive = input * (1.0 - beta.powi(t as i32 + 1)) / (1.0 - beta);
            let removed: f64 = (0..t)
                .map(|k| beta.powi((t - 1 - k) as i32) * spikes[k])
                .sum();
            worst = worst.max((st.u1[0] - (drive - m.u_thr * removed)).abs());
            if prev_s == 1.0 {
                let unreset = beta * prev_u + input;
                ensure(unreset - st.u1[0] == m.u_thr, || {
                    format!(
                        "reset removed {} instead of {}",
                        unreset - st.u1[0],
                        m.u_thr
                    )
                })?;
                resets += 1;
            }
            spikes.push(st.s1[0]);
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.1e}, {resets} exact resets"))
}

fn criterion_6() -> Check {
    let mut rng = Rng::new(6);
    for case in 0..200 {
        let n = 2 + rng.below(60);
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.next_f64() * 8.0).floor() / 8.0)
            .collect();
        let mut truth: Vec<Label> = (0..n).map(|_| u8::from(rng.bernoulli(0.4))).collect();
        truth[0] = 0;
        truth[1] = 1;
        let (mut wins, mut pairs) = (0.0, 0usize);
        for i in (0..n).filter(|&i| truth[i] == 1) {
            for j in (0..n).filter(|&j| truth[j] == 0) {
                pairs += 1;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        let a = auc(&scores, &truth).map_err(|e| e.to_string())?.unwrap();
        ensure(a == wins / pairs as f64, || {
            format!("case {case}: {a} vs {}", wins / pairs as f64)
        })?;

        let pred: Vec<Label> = (0..n).map(|_| u8::from(rng.bernoulli(0.5))).collect();
        let count = |p: u8, t: u8| {
            pred.iter()
                .zip(&truth)
                .filter(|&(&a, &b)| a == p && b == t)
                .count() as u64
        };
        let (tp, fp, tn, fn_) = (count(1, 1), count(1, 0), count(0, 0), count(0, 1));
        let c = confusion(&pred, &truth).map_err(|e| e.to_string())?;
        ensure(c == ConfusionCounts { tp, fp, tn, fn_ }, || {
            format!("case {case}: tally {c:?}")
        })?;
        let m = metrics(&c, None).map_err(|e| e.to_string())?;
        let acc = (tp + tn) as f64 / n as f64;
        let f1 = if tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        let (tpf, fpf, tnf, fnf) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
        let denom = (tpf + fpf) * (tpf + fnf) * (tnf + fpf) * (tnf + fnf);
        let mcc_oracle = if denom == 0.0 {
            0.0
        } else {
            (tpf * tnf - fpf * fnf) / denom.sqrt()
        };
        ensure(
            m.accuracy == acc && m.f1_positive == f1 && m.mcc == mcc_oracle,
            || format!("case {case}: {m:?} vs acc {acc} f1 {f1} mcc {mcc_oracle}"),
        )?;
    }
    let mut swaps = 0;
    for _ in 0..1000 {
        let c = ConfusionCounts {
            tp: rng.below(50) as u64,
            fp: rng.below(50) as u64,
            tn: rng.below(50) as u64,
            fn_: rng.below(50) as u64,
        };
        ensure((mcc(&c) - mcc(&c.swapped())).abs() < 1e-12, || {
            format!("{c:?}")
        })?;
        swaps += 1;
    }
    Ok(format!(
        "200 AUC/tally instances exact, {swaps} class swaps invariant"
    ))
}

fn criterion_7() -> Check {
    for psi in 1..=8 {
        let w = position_weights(psi);
        let mut seen = BTreeSet::new();
        for pattern in 0u32..(1 << psi) {
            let cell: Vec<u8> = (0..psi).map(|j| ((pattern >> j) & 1) as u8).collect();
            let v = collapse_weighted(&cell, &w).map_err(|e| e.to_string())?[0];
            ensure(seen.insert(v.to_bits()), || {
                format!("psi {psi}: collision at {v}")
            })?;
        }
    }
    let mut rng = Rng::new(7);
    let window = Array2::from_shape_fn((20_000, 5), |_| rng.next_f64());
    let mean = window.mean().unwrap();
    let t = rate_encode(&window, 5, 11).map_err(|e| e.to_string())?;
    let d = t.density();
    ensure((d - mean).abs() <= 0.01, || {
        format!("rate density {d} vs mean {mean}")
    })?;
    let lat = latency_encode(&window, 5).map_err(|e| e.to_string())?;
    ensure(
        lat.spikes
            .chunks(5)
            .all(|c| c.iter().map(|&s| s as u32).sum::<u32>() == 1),
        || "latency cell without exactly one spike".into(),
    )?;
    Ok(format!(
        "injective for psi 1..=8, rate density {d:.4} vs mean {mean:.4} over 1e5 cells, latency 1 spike/cell"
    ))
}

fn criterion_8() -> Check {
    let cfg = MiEstimatorConfig::default();
    let mut rng = Rng::new(8);
    let mut min_gap = f64::INFINITY;
    for _ in 0..100 {
        let x: Vec<f64> = (0..1_000).map(|_| rng.next_f64()).collect();
        let mut s = x.clone();
        rng.shuffle(&mut s);
        let gap = mutual_information(&x, &x, &cfg).map_err(|e| e.to_string())?
            - mutual_information(&x, &s, &cfg).map_err(|e| e.to_string())?;
        min_gap = min_gap.min(gap);
    }
    ensure(min_gap >= 0.0, || {
        format!("I(x,x) < I(x,shuffle) by {}", -min_gap)
    })?;
    let x: Vec<f64> = (0..100_000).map(|_| rng.next_f64()).collect();
    let y: Vec<f64> = (0..100_000).map(|_| rng.next_f64()).collect();
    let indep = mutual_information(&x, &y, &cfg).map_err(|e| e.to_string())?;
    ensure(indep < 0.02, || format!("independent MI {indep}"))?;
    Ok(format!(
        "smallest self-vs-shuffle gap {min_gap:.3} nats, independent {indep:.5} nats"
    ))
}

fn benchmark_windows(cfg: &RunConfig) -> WindowSet {
    let ds = synthesize_dataset(20, 7, cfg.synth.length, 1).unwrap();
    let ds = preprocess(&ds, &cfg.prep).unwrap();
    make_windows(&ds, cfg.prep.omega, cfg.prep.stride()).unwrap()
}

fn run_benchmark(cfg: &RunConfig, ws: &WindowSet) -> Vec<EvalReport> {
    [EncoderKind::StalStacked, EncoderKind::Rate]
        .into_iter()
        .map(|kind| {
            let trainer = EnsembleTrainer {
                config: cfg.ensemble(kind),
            };
            let loso = LosoConfig {
                seed: cfg.seed,
                workers: cfg.workers,
                checkpoint_dir: None,
                checkpoint_key: String::new(),
            };
            loso_run(ws, &trainer, &loso, kind.as_str()).unwrap()
        })
        .collect()
}

fn criterion_9(reports: &[EvalReport], elapsed: Duration) -> Check {
    let stal = reports[0].subject.metrics.accuracy;
    let rate = reports[1].subject.metrics.accuracy;
    let detail = format!("STAL-Stacked {stal:.3}, rate {rate:.3}, {elapsed:.0?}");
    ensure(
        stal >= 0.80 && stal > rate && elapsed < Duration::from_secs(30 * 60),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn criterion_10(first: &[EvalReport], second: &[EvalReport]) -> Check {
    for (a, b) in first.iter().zip(second) {
        let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
        ensure(ja.as_bytes() == jb.as_bytes(), || {
            format!("{} reports differ", a.label)
        })?;
    }
    Ok(format!("{} reports byte-identical", first.len()))
}

fn main() {
    let mut results: Vec<(u32, &str, Check)> = vec![
        (1, "ensemble density arithmetic", criterion_1()),
        (2, "latency density is 1/psi", criterion_2()),
        (3, "degenerate classifier convention", criterion_3()),
        (4, "gradient suite", criterion_4()),
        (5, "R-LIF oracle", criterion_5()),
        (6, "metric oracles", criterion_6()),
        (7, "encoder properties", criterion_7()),
        (8, "MI estimator", criterion_8()),
    ];
    for (n, name, r) in &results {
        print_line(*n, name, r);
    }

    let cfg = RunConfig::for_profile(Profile::Desk);
    let ws = benchmark_windows(&cfg);
    let started = Instant::now();
    let first = run_benchmark(&cfg, &ws);
    let r9 = criterion_9(&first, started.elapsed());
    print_line(9, "end-to-end synthetic benchmark", &r9);
    results.push((9, "end-to-end synthetic benchmark", r9));
    let second = run_benchmark(&cfg, &ws);
    let r10 = criterion_10(&first, &second);
    print_line(10, "determinism", &r10);
    results.push((10, "determinism", r10));

    let unexpected: Vec<u32> = results
        .iter()
        .filter(|(n, _, r)| r.is_err() && !KNOWN_UNATTAINABLE.contains(n))
        .map(|(n, _, _)| *n)
        .collect();
    let passed = results.iter().filter(|(_, _, r)| r.is_ok()).count();
    println!("{passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn print_line(n: u32, name: &str, r: &Check) {
    match r {
        Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
        Err(d) => println!("criterion {n:>2} FAIL  {name}: {d}"),
    }
}
