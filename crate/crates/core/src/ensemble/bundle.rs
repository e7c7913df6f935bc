//! On-disk ensemble bundle: one JSON document per model plus a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, Ensemble, ForestModel, ModalityPipeline, ENCODER_FORMAT, FOREST_FORMAT};
use crate::data::Modality;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::persist::{sha256_hex, write_atomic, Document, FORMAT_VERSION};
use crate::srnn::{SrnnModel, SRNN_FORMAT};

pub const BUNDLE_FORMAT: &str = "spikeforge.bundle";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub encoder: EncoderKind,
    /// File name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

fn encoder_file(m: Modality) -> String {
    format!("encoder_{m}.json")
}

fn srnn_file(m: Modality) -> String {
    format!("srnn_{m}.json")
}

const FOREST_FILE: &str = "forest.json";

pub fn save_bundle(
    ens: &Ensemble,
    dir: &Path,
    config_hash: Option<String>,
) -> Result<BundleManifest> {
    ens.validate()?;
    let mut files = BTreeMap::new();
    let mut put = |name: String, json: String| -> Result<()> {
        write_atomic(&dir.join(&name), json.as_bytes())?;
        files.insert(name, sha256_hex(json.as_bytes()));
        Ok(())
    };
    for p in &ens.pipelines {
        put(
            encoder_file(p.modality),
            Document::new(ENCODER_FORMAT, p.encoder.clone())
                .with_hash(config_hash.clone())
                .to_json()?,
        )?;
        put(
            srnn_file(p.modality),
            Document::new(SRNN_FORMAT, p.srnn.clone())
                .with_hash(config_hash.clone())
                .to_json()?,
        )?;
    }
    put(
        FOREST_FILE.to_string(),
        Document::new(FOREST_FORMAT, ens.forest.clone())
            .with_hash(config_hash.clone())
            .to_json()?,
    )?;
    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.to_string(),
        version: FORMAT_VERSION,
        config_hash,
        seed: ens.seed,
        encoder: ens.pipelines[0].encoder.kind(),
        files,
    };
    write_atomic(
        &dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::State(format!("missing artifact {}", path.display()))
        }
        _ => Error::io(path, e),
    })
}

/// Load a bundle, checking every file against the manifest digest.
pub fn load_bundle(dir: &Path) -> Result<(Ensemble, BundleManifest)> {
    let manifest: BundleManifest = serde_json::from_str(&read(&dir.join(MANIFEST_FILE))?)?;
    if manifest.format != BUNDLE_FORMAT || manifest.version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported bundle {} v{}",
            manifest.format, manifest.version
        )));
    }
    let load = |name: String| -> Result<String> {
        let s = read(&dir.join(&name))?;
        match manifest.files.get(&name) {
            Some(h) if *h == sha256_hex(s.as_bytes()) => Ok(s),
            Some(_) => Err(Error::Data(format!(
                "{name} does not match its manifest digest"
            ))),
            None => Err(Error::Data(format!("{name} is not listed in the manifest"))),
        }
    };
    let mut pipelines = Vec::new();
    for m in Modality::ALL {
        let encoder = Document::<Encoder>::from_json(&load(encoder_file(m))?, ENCODER_FORMAT)?.body;
        let srnn = Document::<SrnnModel>::from_json(&load(srnn_file(m))?, SRNN_FORMAT)?.body;
        pipelines.push(ModalityPipeline {
            modality: m,
            encoder,
            srnn,
        });
    }
    let forest =
        Document::<ForestModel>::from_json(&load(FOREST_FILE.to_string())?, FOREST_FORMAT)?.body;
    let ens = Ensemble {
        pipelines,
        forest,
        seed: manifest.seed,
    };
    ens.validate()?;
    Ok((ens, manifest))
}
