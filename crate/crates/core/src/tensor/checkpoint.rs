//! Parameter checkpoints: a JSON manifest naming each tensor with its shape
//! and byte offset, plus a flat little-endian `f64` payload file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dense::Tensor;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    /// Payload file name, relative to the manifest's directory.
    pub payload: String,
    pub entries: Vec<ManifestEntry>,
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `params` to `manifest` and a sibling `.bin` payload.
pub fn save_checkpoint(params: &ParamStore, manifest: &Path) -> Result<()> {
    let payload = payload_path(manifest);
    let mut bytes = Vec::with_capacity(params.num_scalars() * 8);
    let mut entries = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        entries.push(ManifestEntry {
            name: name.to_owned(),
            shape: tensor.shape().to_vec(),
            offset: bytes.len() as u64,
        });
        for v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let doc = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        payload: payload
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_owned(),
        entries,
    };
    if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(manifest, text).map_err(|e| Error::io(manifest, e))
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(manifest: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let doc: CheckpointManifest = serde_json::from_str(&text)?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            manifest,
            format!("unsupported checkpoint version {}", doc.version),
        ));
    }
    let payload = manifest
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&doc.payload);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let mut store = ParamStore::new();
    for entry in doc.entries {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > bytes.len() {
            return Err(Error::format(
                &payload,
                format!("entry {} runs past end of payload", entry.name),
            ));
        }
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(entry.name, Tensor::new(entry.shape, data)?);
    }
    Ok(store)
}
