//! Weight container for toy model bundles.
//!
//! Layout: 8-byte magic `MBWT0001`, little-endian `u64` manifest length,
//! UTF-8 JSON manifest, then every tensor's values as little-endian `f64`
//! in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

use super::toy::{ToyModels, ToySpec};
use super::ModelBundle;

pub const MAGIC: &[u8; 8] = b"MBWT0001";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("tensor {name}: manifest declares {declared:?}, architecture requires {expected:?}")]
    ShapeMismatch {
        name: String,
        declared: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    spec: ToySpec,
    tensors: Vec<TensorEntry>,
}

pub fn write_model_weights<W: Write>(models: &ToyModels, mut out: W) -> Result<(), WeightsError> {
    let tensors = models.tensors();
    let manifest = Manifest {
        version: VERSION,
        spec: models.spec,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| WeightsError::Manifest(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, t) in &tensors {
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_model_weights(models: &ToyModels, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model_weights(models, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_model_weights<R: Read>(mut input: R) -> Result<ToyModels, WeightsError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse(&bytes)
}

pub fn load_model_weights(path: impl AsRef<Path>) -> Result<ModelBundle, WeightsError> {
    Ok(read_model_weights(fs::File::open(path)?)?.bundle())
}

fn parse(bytes: &[u8]) -> Result<ToyModels, WeightsError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let header = bytes.get(8..16).ok_or(WeightsError::Truncated {
        expected: 16,
        found: bytes.len(),
    })?;
    let json_len = u64::from_le_bytes(header.try_into().expect("8 bytes")) as usize;
    let json_end = 16usize.saturating_add(json_len);
    let json = bytes.get(16..json_end).ok_or(WeightsError::Truncated {
        expected: json_end,
        found: bytes.len(),
    })?;

    let raw: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| WeightsError::Manifest(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| WeightsError::Manifest("missing version".into()))?;
    if version != VERSION as u64 {
        return Err(WeightsError::UnsupportedVersion(version as u32));
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| WeightsError::Manifest(e.to_string()))?;

    let expected = manifest.spec.tensor_manifest();
    if expected.len() != manifest.tensors.len() {
        return Err(WeightsError::Manifest(format!(
            "expected {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(WeightsError::Manifest(format!(
                "expected tensor {name}, found {}",
                entry.name
            )));
        }
        if *shape != entry.shape {
            return Err(WeightsError::ShapeMismatch {
                name: name.clone(),
                declared: entry.shape.clone(),
                expected: shape.clone(),
            });
        }
    }

    let payload = &bytes[json_end..];
    let needed: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() * 8)
        .sum();
    if payload.len() < needed {
        return Err(WeightsError::Truncated {
            expected: json_end + needed,
            found: bytes.len(),
        });
    }
    if payload.len() > needed {
        return Err(WeightsError::TrailingBytes(payload.len() - needed));
    }

    let mut offset = 0;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let data = payload[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += n * 8;
        tensors.push(
            Tensor::new(entry.shape.clone(), data).map_err(|e| WeightsError::Manifest(e.to_string()))?,
        );
    }
    ToyModels::from_tensors(manifest.spec, tensors).map_err(|e| WeightsError::Manifest(e.to_string()))
}
