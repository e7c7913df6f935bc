//! Output directories: resolved config, artifacts and a digest manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use spikeforge::config::RunConfig;
use spikeforge::ensemble::{load_bundle, BUNDLE_FORMAT};
use spikeforge::persist::{sha256_hex, write_atomic};
use spikeforge::Error;

pub const RUN_FORMAT: &str = "spikeforge.run";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Path relative to the directory, to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

/// An output directory being filled by one command.
pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
    pub hash: String,
    command: &'static str,
}

impl Run {
    /// Use `dir` as given, or a fresh `<root>/<timestamp>-<hash>`.
    pub fn open(
        cfg: RunConfig,
        command: &'static str,
        dir: Option<PathBuf>,
        root: &Path,
    ) -> Result<Self> {
        let hash = cfg.hash()?;
        let dir = match dir {
            Some(d) => d,
            None => {
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
                let base = root.join(format!("{stamp}-{}", &hash[..12]));
                let mut dir = base.clone();
                let mut n = 1;
                while dir.exists() {
                    n += 1;
                    dir = PathBuf::from(format!("{}-{n}", base.display()));
                }
                dir
            }
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        log::info!("{command}: config {hash}");
        log::info!("resolved config: {}", serde_json::to_string(&cfg)?);
        let run = Self {
            dir,
            cfg,
            hash,
            command,
        };
        run.write(CONFIG, run.cfg.to_json()?.as_bytes())?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        Ok(write_atomic(&self.path(name), bytes)?)
    }

    /// Hash everything in the directory into its manifest.
    pub fn finish(self) -> Result<PathBuf> {
        let manifest = RunManifest {
            format: RUN_FORMAT.to_string(),
            command: self.command.to_string(),
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            files: digest_tree(&self.dir)?,
        };
        self.write(
            MANIFEST,
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(self.dir)
    }
}

fn digest_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir)?;
        if rel == Path::new(MANIFEST) {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| Error::Io {
            path: entry.path().to_path_buf(),
            source: e,
        })?;
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.insert(key, sha256_hex(&bytes));
    }
    Ok(files)
}

/// Problems found by [`verify`]; empty when the directory is intact.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::State(format!("no manifest at {}", path.display())))?;
    let format = serde_json::from_str::<serde_json::Value>(&text)?
        .get("format")
        .and_then(|f| f.as_str().map(str::to_string))
        .unwrap_or_default();
    if format == BUNDLE_FORMAT {
        return Ok(match load_bundle(dir) {
            Ok(_) => Vec::new(),
            Err(e @ (Error::Data(_) | Error::State(_))) => vec![e.to_string()],
            Err(e) => return Err(e.into()),
        });
    }
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if manifest.format != RUN_FORMAT {
        return Err(Error::Data(format!("unknown manifest format {:?}", manifest.format)).into());
    }
    let mut problems = Vec::new();
    let actual = digest_tree(dir)?;
    for (name, digest) in &manifest.files {
        match actual.get(name) {
            None => problems.push(format!("{name}: missing")),
            Some(d) if d != digest => problems.push(format!("{name}: content changed")),
            _ => {}
        }
    }
    for name in actual.keys() {
        if !manifest.files.contains_key(name) {
            problems.push(format!("{name}: not in manifest"));
        }
    }
    if actual.contains_key(CONFIG) {
        match RunConfig::load(&dir.join(CONFIG)).and_then(|c| c.hash()) {
            Ok(h) if h == manifest.config_hash => {}
            Ok(h) => problems.push(format!(
                "{CONFIG}: hashes to {h}, manifest records {}",
                manifest.config_hash
            )),
            Err(e) => problems.push(format!("{CONFIG}: {e}")),
        }
    }
    Ok(problems)
}
