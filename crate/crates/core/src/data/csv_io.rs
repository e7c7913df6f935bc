use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{derive_label, ChannelSchema, Dataset, Modality, Recording, DEFAULT_SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "subject_id",
    "modality",
    "channel_index",
    "time_index",
    "value",
    "pain_intensity",
];

type Samples = Vec<(usize, usize, f64, u64)>;

/// Load a long-format CSV file, or every `*.csv` file in a directory.
///
/// Rows may appear in any order. Subjects without any `pain_intensity`
/// come back unlabeled; supply their label with [`Dataset::set_label`].
pub fn load_csv(path: impl AsRef<Path>, schema: &ChannelSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no .csv files in {}", path.display())));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut samples: HashMap<(String, Modality), Samples> = HashMap::new();
    let mut intensity: BTreeMap<String, i64> = BTreeMap::new();
    for file in &files {
        read_rows(file, schema, &mut samples, &mut intensity)?;
    }

    let mut ds = Dataset::default();
    for ((subject, modality), mut rows) in samples {
        let n_ch = schema.channels(modality).expect("checked while parsing");
        rows.sort_unstable_by_key(|&(t, c, _, _)| (t, c));
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::Duplicate(format!(
                    "{subject}/{modality} channel {} time {} (line {})",
                    pair[1].1, pair[1].0, pair[1].3
                )));
            }
        }
        let seen_channels: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.1).collect();
        if seen_channels.len() != n_ch {
            return Err(Error::Schema(format!(
                "{subject}/{modality}: {} channels present, schema expects {n_ch}",
                seen_channels.len()
            )));
        }
        let n_t = rows.last().map_or(0, |r| r.0 + 1);
        if rows.len() != n_t * n_ch {
            return Err(Error::Data(format!(
                "{subject}/{modality}: {} samples for {n_t} time steps x {n_ch} channels",
                rows.len()
            )));
        }
        let data = Array2::from_shape_vec((n_t, n_ch), rows.iter().map(|r| r.2).collect())
            .expect("dense grid checked above");
        let pain = intensity.get(&subject).map(|&p| p as u8);
        ds.insert(Recording {
            subject_id: subject,
            modality,
            data,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            pain_intensity: pain,
        });
    }

    let modalities = ds.modalities();
    for (subject, recs) in &ds.recordings {
        if recs.keys().copied().collect::<Vec<_>>() != modalities {
            return Err(Error::Data(format!(
                "subject {subject} does not carry every modality"
            )));
        }
    }
    for (subject, p) in intensity {
        ds.labels.insert(subject, derive_label(p)?);
    }
    Ok(ds)
}

fn read_rows(
    file: &Path,
    schema: &ChannelSchema,
    samples: &mut HashMap<(String, Modality), Samples>,
    intensity: &mut BTreeMap<String, i64>,
) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(file)
        .map_err(|e| csv_error(file, e))?;
    let header = reader.headers().map_err(|e| csv_error(file, e))?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: file.to_path_buf(),
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(file, e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            path: file.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| record.get(i).unwrap_or("").trim();

        let subject = field(0);
        if subject.is_empty() {
            return Err(bad("empty subject_id".into()));
        }
        let modality: Modality = field(1)
            .parse()
            .map_err(|_| bad(format!("unknown modality {:?}", field(1))))?;
        let channel: usize = field(2)
            .parse()
            .map_err(|_| bad(format!("bad channel_index {:?}", field(2))))?;
        let time: usize = field(3)
            .parse()
            .map_err(|_| bad(format!("bad time_index {:?}", field(3))))?;
        let value: f64 = field(4)
            .parse()
            .map_err(|_| bad(format!("bad value {:?}", field(4))))?;
        if !value.is_finite() {
            return Err(bad(format!("non-finite value {value}")));
        }
        let n_ch = schema.channels(modality).ok_or_else(|| {
            Error::Schema(format!("modality {modality} not in schema (line {line})"))
        })?;
        if channel >= n_ch {
            return Err(Error::Schema(format!(
                "{modality} channel {channel} out of range for {n_ch} channels (line {line})"
            )));
        }
        if !field(5).is_empty() {
            let p: i64 = field(5)
                .parse()
                .map_err(|_| bad(format!("bad pain_intensity {:?}", field(5))))?;
            derive_label(p).map_err(|e| bad(e.to_string()))?;
            match intensity.get(subject) {
                Some(&prev) if prev != p => {
                    return Err(bad(format!(
                        "subject {subject} has conflicting pain intensities {prev} and {p}"
                    )))
                }
                _ => {
                    intensity.insert(subject.to_string(), p);
                }
            }
        }
        samples
            .entry((subject.to_string(), modality))
            .or_default()
            .push((time, channel, value, line));
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn write_rows(out: &mut impl Write, rec: &Recording) -> std::io::Result<()> {
    let mut first = true;
    for (t, row) in rec.data.rows().into_iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let pain = match (first, rec.pain_intensity) {
                (true, Some(p)) => p.to_string(),
                _ => String::new(),
            };
            first = false;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                rec.subject_id, rec.modality, c, t, v, pain
            )?;
        }
    }
    Ok(())
}

/// Write one recording in the long CSV format.
pub fn write_recording_csv(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let res = writeln!(out, "{}", CSV_HEADER.join(","))
        .and_then(|_| write_rows(&mut out, rec))
        .and_then(|_| out.flush());
    res.map_err(|e| Error::io(path, e))
}

/// Write every recording of a dataset into one CSV file.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(f);
    let res = (|| {
        writeln!(out, "{}", CSV_HEADER.join(","))?;
        for rec in ds.iter_recordings() {
            write_rows(&mut out, rec)?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}
