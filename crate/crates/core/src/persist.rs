//! Versioned JSON documents with bit-exact float payloads.
//!
//! Float arrays are stored as base64 of their little-endian IEEE-754 bytes,
//! so a save/load cycle reproduces every weight bit for bit.

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!(
            "payload of {} bytes is not a f64 array",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// `#[serde(with = "persist::b64_vec")]`
pub mod b64_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_f64s(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode_f64s(&s).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "persist::b64_array1")]`
pub mod b64_array1 {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_f64s(&a.to_vec()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode_f64s(&s)
            .map(Array1::from)
            .map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "persist::b64_array2")]`; stores `[rows, cols]` next to the payload.
pub mod b64_array2 {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Packed {
        shape: [usize; 2],
        data: String,
    }

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let flat: Vec<f64> = a.iter().copied().collect();
        Packed {
            shape: [a.nrows(), a.ncols()],
            data: super::encode_f64s(&flat),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let p = Packed::deserialize(d)?;
        let flat = super::decode_f64s(&p.data).map_err(serde::de::Error::custom)?;
        Array2::from_shape_vec((p.shape[0], p.shape[1]), flat).map_err(serde::de::Error::custom)
    }
}

/// Envelope written around every model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Document<T> {
    pub fn new(format: &str, body: T) -> Self {
        Self {
            format: format.to_string(),
            version: FORMAT_VERSION,
            config_hash: None,
            body,
        }
    }

    pub fn with_hash(mut self, hash: Option<String>) -> Self {
        self.config_hash = hash;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str, format: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.format != format {
            return Err(Error::Data(format!(
                "expected a {format} document, found {}",
                doc.format
            )));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported {format} version {}",
                doc.version
            )));
        }
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>, format: &str) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::State(format!("missing artifact {}", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        Self::from_json(&s, format)
    }
}

/// Write via a sibling temp file and rename, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
