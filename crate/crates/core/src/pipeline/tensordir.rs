//! On-disk tensor bundles: a `tensors.json` manifest plus one raw
//! little-endian blob per tensor. Baseline feeds, captured outputs, and
//! calibration sets all use this layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::io::sha256_hex;
use crate::ir::{DType, TensorValue};
use crate::interp::TensorMap;

pub const MANIFEST_FILE: &str = "tensors.json";

#[derive(Debug, Error)]
pub enum TensorDirError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid tensor manifest {path}: {detail}")]
    Manifest { path: String, detail: String },
    #[error("invalid payload for tensor \"{name}\": {detail}")]
    Payload { name: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    /// Blob file name, relative to the manifest's directory.
    pub file: String,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TensorDirError + '_ {
    move |source| TensorDirError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn blob_file_name(name: &str, taken: &mut Vec<String>) -> String {
    let mut base: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if base.is_empty() {
        base.push('t');
    }
    let mut candidate = format!("{base}.bin");
    let mut n = 2;
    while taken.contains(&candidate) {
        candidate = format!("{base}_{n}.bin");
        n += 1;
    }
    taken.push(candidate.clone());
    candidate
}

/// Writes every tensor of `tensors` into `dir` (created if needed), in map
/// order. The write is deterministic: same tensors, same bytes.
pub fn write_tensor_dir(dir: &Path, tensors: &TensorMap) -> Result<(), TensorDirError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = Vec::with_capacity(tensors.len());
    let mut taken = Vec::new();
    for (name, value) in tensors {
        let file = blob_file_name(name, &mut taken);
        let blob_path = dir.join(&file);
        std::fs::write(&blob_path, value.to_le_bytes()).map_err(io_err(&blob_path))?;
        manifest.push(TensorMeta {
            name: name.clone(),
            dtype: value.dtype(),
            shape: value.shape.clone(),
            file,
        });
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))
}

fn read_manifest(dir: &Path) -> Result<(PathBuf, Vec<TensorMeta>), TensorDirError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Vec<TensorMeta> =
        serde_json::from_str(&text).map_err(|e| TensorDirError::Manifest {
            path: manifest_path.display().to_string(),
            detail: e.to_string(),
        })?;
    for meta in &manifest {
        // Blob references must stay inside the bundle directory.
        let file = Path::new(&meta.file);
        if file.components().count() != 1 || file.is_absolute() {
            return Err(TensorDirError::Manifest {
                path: manifest_path.display().to_string(),
                detail: format!("blob reference \"{}\" leaves the bundle directory", meta.file),
            });
        }
    }
    Ok((manifest_path, manifest))
}

/// Reads a bundle written by [`write_tensor_dir`], restoring map order from
/// the manifest.
pub fn read_tensor_dir(dir: &Path) -> Result<TensorMap, TensorDirError> {
    let (_, manifest) = read_manifest(dir)?;
    let mut tensors = TensorMap::new();
    for meta in manifest {
        let blob_path = dir.join(&meta.file);
        let bytes = std::fs::read(&blob_path).map_err(io_err(&blob_path))?;
        let value = TensorValue::from_le_bytes(meta.dtype, meta.shape, &bytes).map_err(|detail| {
            TensorDirError::Payload {
                name: meta.name.clone(),
                detail,
            }
        })?;
        tensors.insert(meta.name, value);
    }
    Ok(tensors)
}

/// Content hash of a bundle: manifest bytes followed by each blob in
/// manifest order.
pub fn tensor_dir_sha256(dir: &Path) -> Result<String, TensorDirError> {
    let (manifest_path, manifest) = read_manifest(dir)?;
    let mut bytes = std::fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    for meta in &manifest {
        let blob_path = dir.join(&meta.file);
        bytes.extend(std::fs::read(&blob_path).map_err(io_err(&blob_path))?);
    }
    Ok(sha256_hex(&bytes))
}
