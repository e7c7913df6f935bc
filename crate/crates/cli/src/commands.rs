use std::path::{Path, PathBuf};

use anyhow::Result;
use base64::Engine;
use serde::{Deserialize, Serialize};
use spikeforge::data::{
    load_csv, make_windows, preprocess, synthesize, write_recording_csv, ChannelSchema, Dataset,
    Label, Modality, Window, WindowSet,
};
use spikeforge::encoders::EncoderKind;
use spikeforge::ensemble::{
    ensemble_train, fit_classifier, fit_encoder, save_bundle, window_stream, Encoder,
    ENCODER_FORMAT,
};
use spikeforge::eval::{
    comparison_csv, comparison_gnuplot, comparison_text, ensemble_density, loso_run, DensityReport,
    EnsembleTrainer, EvalReport, LosoConfig,
};
use spikeforge::persist::Document;
use spikeforge::rng::derive_seed;
use spikeforge::srnn::SRNN_FORMAT;
use spikeforge::Error;

use crate::run::{self, Run};
use crate::{Format, Global};

const LABELS_FILE: &str = "labels.json";
const SPIKES_FORMAT: &str = "spikeforge.spikes";

/// Same per-modality seed the ensemble uses, so stage-wise training matches it.
fn pipeline_seed(seed: u64, m: Modality) -> u64 {
    derive_seed(seed, &[10 + m.index() as u64])
}

fn write_dataset(run: &Run, ds: &Dataset) -> Result<()> {
    for rec in ds.iter_recordings() {
        write_recording_csv(
            rec,
            run.path(&format!("{}_{}.csv", rec.subject_id, rec.modality)),
        )?;
    }
    run.write(
        LABELS_FILE,
        serde_json::to_string_pretty(&ds.labels)?.as_bytes(),
    )
}

pub fn synth(
    g: &Global,
    subjects: Option<usize>,
    positive: Option<usize>,
    len: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = g.resolve()?;
    if let Some(v) = subjects {
        cfg.synth.n_subjects = v;
    }
    if let Some(v) = positive {
        cfg.synth.n_positive = v;
    }
    if let Some(v) = len {
        cfg.synth.length = v;
    }
    cfg.synth.seed = cfg.seed;
    let ds = synthesize(&cfg.synth)?;
    let run = Run::open(cfg, "synth", Some(out), &g.runs)?;
    write_dataset(&run, &ds)?;
    println!(
        "{} recordings from {} subjects in {}",
        ds.n_recordings(),
        ds.n_subjects(),
        run.finish()?.display()
    );
    Ok(())
}

/// Load a CSV file or directory; a directory may carry a `labels.json`.
fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut ds = load_csv(path, &ChannelSchema::reference())?;
    let labels = path.join(LABELS_FILE);
    if path.is_dir() && labels.exists() {
        let text = std::fs::read_to_string(&labels).map_err(|e| Error::Io {
            path: labels.clone(),
            source: e,
        })?;
        let map: std::collections::BTreeMap<String, Label> = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", labels.display())))?;
        for (s, l) in map {
            if ds.recordings.contains_key(&s) {
                ds.set_label(&s, l)?;
            }
        }
    }
    Ok(ds)
}

pub fn ingest(g: &Global, input: &Path, labels: &[String], out: PathBuf) -> Result<()> {
    let cfg = g.resolve()?;
    let mut ds = load_dataset(input)?;
    for spec in labels {
        let (s, l) = spec
            .split_once('=')
            .and_then(|(s, l)| Some((s, l.parse::<Label>().ok().filter(|&l| l <= 1)?)))
            .ok_or_else(|| Error::Argument(format!("--label {spec:?} is not SUBJECT=0|1")))?;
        if !ds.recordings.contains_key(s) {
            return Err(Error::Argument(format!("--label names unknown subject {s}")).into());
        }
        ds.set_label(s, l)?;
    }
    ds.validate()?;
    let run = Run::open(cfg, "ingest", Some(out), &g.runs)?;
    write_dataset(&run, &ds)?;
    let positive = ds.labels.values().filter(|&&l| l == 1).count();
    println!(
        "{} subjects ({positive} positive), {} recordings -> {}",
        ds.n_subjects(),
        ds.n_recordings(),
        run.finish()?.display()
    );
    Ok(())
}

fn load_windows(path: &Path, cfg: &spikeforge::config::RunConfig) -> Result<WindowSet> {
    let ds = load_dataset(path)?;
    ds.validate()?;
    let ds = preprocess(&ds, &cfg.prep)?;
    Ok(make_windows(&ds, cfg.prep.omega, cfg.prep.stride())?)
}

fn encoder_file(m: Modality) -> String {
    format!("encoder_{m}.json")
}

/// Load a trained encoder, or build an untrained one.
fn obtain_encoder(
    run: &Run,
    windows: &[&Window],
    m: Modality,
    kind: EncoderKind,
    from: Option<&Path>,
) -> Result<Encoder> {
    if let Some(dir) = from {
        let enc = Document::<Encoder>::load(dir.join(encoder_file(m)), ENCODER_FORMAT)?.body;
        if enc.kind() != kind {
            return Err(Error::Data(format!(
                "{} holds a {} encoder, {kind} requested",
                dir.display(),
                enc.kind()
            ))
            .into());
        }
        return Ok(enc);
    }
    if kind.is_stal() {
        return Err(Error::State(format!(
            "{kind} needs trained encoders; pass --encoders-from <train-stal run>"
        ))
        .into());
    }
    Ok(fit_encoder(
        windows,
        m,
        &run.cfg.ensemble(kind),
        pipeline_seed(run.cfg.seed, m),
    )?
    .0)
}

pub fn train_stal(g: &Global, data: &Path, kind: EncoderKind) -> Result<()> {
    if !kind.is_stal() {
        return Err(Error::Argument(format!("{kind} has no trainable parameters")).into());
    }
    let cfg = g.resolve()?;
    let ws = load_windows(data, &cfg)?;
    let run = Run::open(cfg, "train-stal", g.run_dir.clone(), &g.runs)?;
    let ens_cfg = run.cfg.ensemble(kind);
    for m in Modality::ALL {
        let windows = ws.of_modality(m);
        let (enc, hist) = fit_encoder(&windows, m, &ens_cfg, pipeline_seed(run.cfg.seed, m))?;
        let doc = Document::new(ENCODER_FORMAT, enc).with_hash(Some(run.hash.clone()));
        run.write(&encoder_file(m), doc.to_json()?.as_bytes())?;
        if let Some(h) = hist {
            let last = h.epochs.last().map_or(f64::NAN, |e| e.total);
            println!(
                "{m}: {} epochs, best {} (final loss {last:.4})",
                h.epochs.len(),
                h.best_epoch
            );
            run.write(&format!("stal_{m}_loss.csv"), h.to_csv().as_bytes())?;
        }
    }
    println!("{}", run.finish()?.display());
    Ok(())
}

pub fn train_srnn(g: &Global, data: &Path, kind: EncoderKind, from: Option<&Path>) -> Result<()> {
    let cfg = g.resolve()?;
    let ws = load_windows(data, &cfg)?;
    let run = Run::open(cfg, "train-srnn", g.run_dir.clone(), &g.runs)?;
    let ens_cfg = run.cfg.ensemble(kind);
    for m in Modality::ALL {
        let windows = ws.of_modality(m);
        let enc = obtain_encoder(&run, &windows, m, kind, from)?;
        let seed = pipeline_seed(run.cfg.seed, m);
        let (srnn, hist) = fit_classifier(&windows, m, &enc, &ens_cfg, seed)?;
        if let Some(e) = hist.epochs.last() {
            println!(
                "{m}: {} epochs, train accuracy {:.3}",
                hist.epochs.len(),
                e.train_acc
            );
        }
        let hash = Some(run.hash.clone());
        run.write(
            &encoder_file(m),
            Document::new(ENCODER_FORMAT, enc)
                .with_hash(hash.clone())
                .to_json()?
                .as_bytes(),
        )?;
        run.write(
            &format!("srnn_{m}.json"),
            Document::new(SRNN_FORMAT, srnn)
                .with_hash(hash)
                .to_json()?
                .as_bytes(),
        )?;
        run.write(&format!("srnn_{m}_history.csv"), hist.to_csv().as_bytes())?;
    }
    println!("{}", run.finish()?.display());
    Ok(())
}

pub fn train_ensemble(g: &Global, data: &Path, kind: EncoderKind) -> Result<()> {
    let cfg = g.resolve()?;
    let ws = load_windows(data, &cfg)?;
    let run = Run::open(cfg, "train-ensemble", g.run_dir.clone(), &g.runs)?;
    let (ens, histories) = ensemble_train(&ws, &run.cfg.ensemble(kind), run.cfg.seed)?;
    save_bundle(&ens, &run.path("bundle"), Some(run.hash.clone()))?;
    for h in &histories {
        if let Some(s) = &h.stal {
            run.write(
                &format!("stal_{}_loss.csv", h.modality),
                s.to_csv().as_bytes(),
            )?;
        }
        run.write(
            &format!("srnn_{}_history.csv", h.modality),
            h.srnn.to_csv().as_bytes(),
        )?;
    }
    let out = ens.evaluate(&ws)?;
    let correct = out.predictions.iter().filter(|p| p.pred == p.label).count();
    println!(
        "training-set window accuracy {:.3} over {} windows",
        correct as f64 / out.predictions.len() as f64,
        out.predictions.len()
    );
    println!("{}", run.finish()?.join("bundle").display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ArchivedTrain {
    subject_id: String,
    modality: Modality,
    offset: usize,
    omega: usize,
    psi: usize,
    channels: usize,
    /// One byte per slot, base64.
    spikes: String,
}

#[derive(Serialize)]
struct DensityFile {
    encoder: EncoderKind,
    densities: DensityReport,
}

pub fn encode(g: &Global, data: &Path, kind: EncoderKind, from: Option<&Path>) -> Result<()> {
    let cfg = g.resolve()?;
    let ws = load_windows(data, &cfg)?;
    let run = Run::open(cfg, "encode", g.run_dir.clone(), &g.runs)?;
    let mut archive = Vec::new();
    let mut density = [0.0; 3];
    for m in Modality::ALL {
        let windows = ws.of_modality(m);
        let enc = obtain_encoder(&run, &windows, m, kind, from)?;
        let arrays: Vec<_> = windows.iter().map(|w| &w.data).collect();
        let streams: Vec<u64> = windows.iter().map(|w| window_stream(w)).collect();
        let trains = enc.encode_batch(&arrays, &streams)?;
        let spikes: usize = trains.iter().map(|t| t.spike_count()).sum();
        let slots: usize = trains.iter().map(|t| t.slots()).sum();
        density[m.index()] = if slots == 0 {
            0.0
        } else {
            spikes as f64 / slots as f64
        };
        for (w, t) in windows.iter().zip(&trains) {
            archive.push(ArchivedTrain {
                subject_id: w.subject_id.clone(),
                modality: m,
                offset: w.offset,
                omega: t.omega,
                psi: t.psi,
                channels: t.channels,
                spikes: base64::engine::general_purpose::STANDARD.encode(&t.spikes),
            });
        }
    }
    let [semg, angle, energy] = density;
    let report = DensityFile {
        encoder: kind,
        densities: DensityReport {
            semg,
            angle,
            energy,
            ensemble: ensemble_density(semg, energy, angle),
        },
    };
    run.write(
        "spikes.json",
        Document::new(SPIKES_FORMAT, archive)
            .with_hash(Some(run.hash.clone()))
            .to_json()?
            .as_bytes(),
    )?;
    run.write(
        "densities.json",
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    let d = &report.densities;
    println!(
        "{kind}: sEMG {:.3}  Energy {:.3}  Angle {:.3}  ensemble {:.3}",
        d.semg, d.energy, d.angle, d.ensemble
    );
    println!("{}", run.finish()?.display());
    Ok(())
}

pub fn loso(g: &Global, data: &Path, encoders: &[EncoderKind]) -> Result<()> {
    let mut cfg = g.resolve()?;
    if !encoders.is_empty() {
        cfg.encoders = encoders.to_vec();
    }
    let ws = load_windows(data, &cfg)?;
    let run = Run::open(cfg, "loso", g.run_dir.clone(), &g.runs)?;
    let mut reports = Vec::new();
    for &kind in &run.cfg.encoders {
        let started = std::time::Instant::now();
        let trainer = EnsembleTrainer {
            config: run.cfg.ensemble(kind),
        };
        let loso_cfg = LosoConfig {
            seed: run.cfg.seed,
            workers: run.cfg.workers,
            checkpoint_dir: Some(run.path("checkpoints").join(kind.as_str())),
            checkpoint_key: format!("{}:{kind}", run.hash),
        };
        let report = loso_run(&ws, &trainer, &loso_cfg, kind.as_str())?;
        log::info!(
            "{kind}: subject accuracy {:.4} in {:.1?}",
            report.subject.metrics.accuracy,
            started.elapsed()
        );
        report.write(&run.dir, &format!("loso_{kind}"))?;
        reports.push(report);
    }
    run.write("comparison.csv", comparison_csv(&reports).as_bytes())?;
    run.write("comparison.dat", comparison_gnuplot(&reports).as_bytes())?;
    run.write("comparison.txt", comparison_text(&reports).as_bytes())?;
    print!("{}", comparison_text(&reports));
    println!("{}", run.finish()?.display());
    Ok(())
}

/// LOSO reports of a run directory, in the encoder order of the comparison table.
pub fn load_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut reports = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        if name.starts_with("loso_") && name.ends_with(".json") {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let r: EvalReport = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(Error::State(format!("no LOSO reports in {}", dir.display())).into());
    }
    let rank = |r: &EvalReport| {
        EncoderKind::ALL
            .iter()
            .position(|k| k.as_str() == r.label)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by(|a, b| rank(a).cmp(&rank(b)).then(a.label.cmp(&b.label)));
    Ok(reports)
}

pub fn report(dir: &Path, format: Format) -> Result<()> {
    let reports = load_reports(dir)?;
    print!(
        "{}",
        match format {
            Format::Text => comparison_text(&reports),
            Format::Csv => comparison_csv(&reports),
            Format::Gnuplot => comparison_gnuplot(&reports),
        }
    );
    Ok(())
}

pub fn verify(dir: &Path) -> Result<()> {
    let problems = run::verify(dir)?;
    if problems.is_empty() {
        println!("{}: ok", dir.display());
        return Ok(());
    }
    for p in &problems {
        println!("{p}");
    }
    Err(Error::Data(format!(
        "{} artifact(s) drifted in {}",
        problems.len(),
        dir.display()
    ))
    .into())
}
