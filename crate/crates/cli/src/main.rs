mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spikeforge::config::{Profile, RunConfig};
use spikeforge::encoders::EncoderKind;
use spikeforge::Error;

#[derive(Parser)]
#[command(
    name = "spikeforge",
    version,
    about = "Spike-encoded multimodal biosignal classification"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Config sources and overrides shared by every subcommand.
#[derive(Args, Debug, Default)]
pub struct Global {
    /// JSON config document; flags below override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base profile (desk or paper) when the config file names none.
    #[arg(long, global = true)]
    pub profile: Option<Profile>,
    /// Master seed; beats SPIKEFORGE_SEED, which beats the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent of auto-named run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs: PathBuf,
    /// Exact output directory, e.g. to resume an interrupted LOSO run.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Window length in frames.
    #[arg(long, global = true)]
    pub omega: Option<usize>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    /// Spike slots per cell.
    #[arg(long, global = true)]
    pub psi: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Weight of the sparsity term in the encoder loss.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Classifier hidden width.
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub stal_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub srnn_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub trees: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic CSV dataset.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        positive: Option<usize>,
        /// Frames per recording.
        #[arg(long)]
        len: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Validate a CSV file or directory and store it in canonical form.
    Ingest {
        input: PathBuf,
        /// Label for subjects without pain_intensity, as SUBJECT=0|1.
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train one encoder per modality.
    TrainStal {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "stal-stacked")]
        encoder: EncoderKind,
    },
    /// Train one classifier per modality on encoded windows.
    TrainSrnn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "stal-stacked")]
        encoder: EncoderKind,
        /// Run directory of `train-stal`, required for trained encoders.
        #[arg(long)]
        encoders_from: Option<PathBuf>,
    },
    /// Train the full ensemble on every subject and save the bundle.
    TrainEnsemble {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "stal-stacked")]
        encoder: EncoderKind,
    },
    /// Encode every window and report spike densities.
    Encode {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "stal-stacked")]
        encoder: EncoderKind,
        #[arg(long)]
        encoders_from: Option<PathBuf>,
    },
    /// Leave-one-subject-out evaluation of one or more encoders.
    Loso {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        encoders: Vec<EncoderKind>,
    },
    /// Print the comparison table of a LOSO run directory.
    Report {
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Re-hash the artifacts of a run, dataset or bundle directory.
    Verify { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Gnuplot,
}

impl Global {
    /// File, then environment, then flags.
    pub fn resolve(&self) -> spikeforge::Result<RunConfig> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str::<serde_json::Value>(&text)?
            }
            None => serde_json::json!({}),
        };
        if let (Some(p), Some(map)) = (self.profile, doc.as_object_mut()) {
            map.entry("profile").or_insert(serde_json::to_value(p)?);
        }
        let mut cfg = RunConfig::from_json(&doc.to_string())?;
        cfg.apply_env()?;
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.omega {
            cfg.prep.omega = v;
        }
        if self.stride.is_some() {
            cfg.prep.stride = self.stride;
        }
        if let Some(v) = self.psi {
            cfg.stal.psi = v;
        }
        if let Some(v) = self.alpha {
            cfg.stal.alpha = v;
        }
        if let Some(v) = self.lambda {
            cfg.stal_train.lambda = v;
        }
        if let Some(v) = self.hidden {
            cfg.srnn.n_hidden = v;
        }
        if let Some(v) = self.stal_epochs {
            cfg.stal_train.epochs = v;
        }
        if let Some(v) = self.srnn_epochs {
            cfg.srnn_train.epochs = v;
        }
        if let Some(v) = self.trees {
            cfg.forest.n_trees = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(1, |e| match e {
            Error::Argument(_) => 2,
            Error::State(_) | Error::Io { .. } => 4,
            _ => 3,
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Synth {
            subjects,
            positive,
            len,
            out,
        } => commands::synth(g, subjects, positive, len, out),
        Command::Ingest { input, labels, out } => commands::ingest(g, &input, &labels, out),
        Command::TrainStal { data, encoder } => commands::train_stal(g, &data, encoder),
        Command::TrainSrnn {
            data,
            encoder,
            encoders_from,
        } => commands::train_srnn(g, &data, encoder, encoders_from.as_deref()),
        Command::TrainEnsemble { data, encoder } => commands::train_ensemble(g, &data, encoder),
        Command::Encode {
            data,
            encoder,
            encoders_from,
        } => commands::encode(g, &data, encoder, encoders_from.as_deref()),
        Command::Loso { data, encoders } => commands::loso(g, &data, &encoders),
        Command::Report { run, format } => commands::report(&run, format),
        Command::Verify { dir } => commands::verify(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
