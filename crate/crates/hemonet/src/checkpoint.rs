//! Model checkpoints.
//!
//! A checkpoint is a two-part archive in one file: an 8-byte magic tag and a
//! little-endian u64 length, followed by a UTF-8 JSON manifest, followed by a
//! raw blob of little-endian `f32` values. The manifest lists every tensor
//! (name, shape, dtype, byte offset, byte length), carries the architecture
//! and training configurations, and stores a 64-bit FNV-1a checksum of the
//! blob so truncation or bit rot is caught before any tensor is trusted.

use crate::arch::{build_model, ArchitectureConfig, Model};
use crate::fnv1a64;
use crate::nn::ParamKind;
use crate::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"HEMONET1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("unknown architecture family `{0}`")]
    UnknownFamily(String),
    #[error("blob checksum mismatch: manifest says {expected}, data hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("tensor `{name}`: {reason}")]
    TensorMismatch { name: String, reason: String },
}

/// Provenance stamped into every artifact this toolkit writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub seed: u64,
    pub config_digest: String,
    pub version: String,
}

impl ArtifactMeta {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            seed,
            config_digest: config_digest.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Digest of any serializable configuration, for artifact stamping.
pub fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    format!("{:016x}", fnv1a64(&bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len_bytes: usize,
    kind: String,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    meta: ArtifactMeta,
    epoch: usize,
    architecture: serde_json::Value,
    training: Option<TrainingConfig>,
    blob_checksum: String,
    tensors: Vec<TensorRecord>,
}

/// Everything a checkpoint carries besides the weights.
#[derive(Debug, Clone)]
pub struct CheckpointInfo {
    pub meta: ArtifactMeta,
    pub epoch: usize,
    pub training: Option<TrainingConfig>,
}

/// Serializes the model (weights and running statistics), its configuration,
/// and the training configuration into one file.
pub fn save_checkpoint(
    model: &Model,
    training: Option<&TrainingConfig>,
    epoch: usize,
    meta: &ArtifactMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::with_capacity(model.store.len());
    for entry in model.store.entries() {
        let offset = blob.len();
        for v in entry.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorRecord {
            name: entry.name.clone(),
            shape: entry.value.shape().to_vec(),
            dtype: "f32".to_string(),
            offset,
            len_bytes: blob.len() - offset,
            kind: match entry.kind {
                ParamKind::Weight => "weight".to_string(),
                ParamKind::RunningStat => "running_stat".to_string(),
            },
            frozen: entry.frozen,
        });
    }
    let manifest = Manifest {
        format: "hemonet-checkpoint-v1".to_string(),
        meta: meta.clone(),
        epoch,
        architecture: serde_json::to_value(&model.config)
            .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?,
        training: training.cloned(),
        blob_checksum: format!("{:016x}", fnv1a64(&blob)),
        tensors,
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    file.write_all(&blob)?;
    Ok(())
}

const KNOWN_FAMILIES: [&str; 5] = ["vgg", "resnet_v2", "se_resnet", "resnext", "densenet"];

/// Loads a checkpoint, rebuilding the model from its stored configuration and
/// restoring every tensor bit-for-bit.
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointInfo), CheckpointError> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)
        .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;

    // Family is validated before the full architecture parse so an unknown
    // family is reported as such rather than as a generic manifest error.
    let family = manifest
        .architecture
        .get("family")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CheckpointError::CorruptManifest("missing family tag".to_string()))?;
    if !KNOWN_FAMILIES.contains(&family) {
        return Err(CheckpointError::UnknownFamily(family.to_string()));
    }
    let config: ArchitectureConfig = serde_json::from_value(manifest.architecture.clone())
        .map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;

    let mut blob = Vec::new();
    file.read_to_end(&mut blob)?;
    let actual = format!("{:016x}", fnv1a64(&blob));
    if actual != manifest.blob_checksum {
        return Err(CheckpointError::ChecksumMismatch {
            expected: manifest.blob_checksum.clone(),
            actual,
        });
    }

    let mut model = build_model(&config, 0).map_err(|e| CheckpointError::TensorMismatch {
        name: "<architecture>".to_string(),
        reason: e.to_string(),
    })?;

    if model.store.len() != manifest.tensors.len() {
        return Err(CheckpointError::TensorMismatch {
            name: "<store>".to_string(),
            reason: format!(
                "checkpoint has {} tensors, architecture builds {}",
                manifest.tensors.len(),
                model.store.len()
            ),
        });
    }
    for (entry, record) in model.store.entries_mut().iter_mut().zip(&manifest.tensors) {
        if entry.name != record.name {
            return Err(CheckpointError::TensorMismatch {
                name: record.name.clone(),
                reason: format!("expected tensor `{}` at this position", entry.name),
            });
        }
        if entry.value.shape() != record.shape.as_slice() {
            return Err(CheckpointError::TensorMismatch {
                name: record.name.clone(),
                reason: format!(
                    "shape {:?} in checkpoint, {:?} in architecture",
                    record.shape,
                    entry.value.shape()
                ),
            });
        }
        if record.dtype != "f32" {
            return Err(CheckpointError::TensorMismatch {
                name: record.name.clone(),
                reason: format!("unsupported dtype {}", record.dtype),
            });
        }
        let end = record.offset + record.len_bytes;
        if end > blob.len() || record.len_bytes != entry.value.len() * 4 {
            return Err(CheckpointError::TensorMismatch {
                name: record.name.clone(),
                reason: "byte range outside blob".to_string(),
            });
        }
        let values: Vec<f32> = blob[record.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entry.value =
            crate::tensor::Tensor::from_vec(&record.shape, values).expect("shape/len validated");
        entry.frozen = record.frozen;
    }

    Ok((
        model,
        CheckpointInfo {
            meta: manifest.meta,
            epoch: manifest.epoch,
            training: manifest.training,
        },
    ))
}
