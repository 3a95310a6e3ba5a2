//! Checkpoint file format.
//!
//! Layout: the magic bytes `TAN1`, a little-endian u32 length prefix, a
//! UTF-8 JSON header (version, train config, category inventory,
//! vocabulary, tensor directory, best validation F1, epoch), the tensor
//! payload as contiguous little-endian 32-bit floats, and a trailing
//! CRC32 of everything before it. Tensor directory offsets and lengths
//! count f32 elements from the start of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryInventory, EmbeddingTable, Vocabulary};
use crate::model::TanModel;
use crate::numerics::Tensor;

use super::{TrainConfig, TrainError};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TAN1";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    inventory: Vec<String>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    best_val_f1: f64,
    epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

/// Run metadata stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub best_val_f1: f64,
    pub epoch: u64,
}

/// The directory lists the embedding matrix first (the model needs it for
/// inference whether or not it was fine-tuned), then every trainable
/// parameter in canonical order.
fn tensor_list(model: &TanModel<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut list = vec![("embedding".to_string(), model.embeddings.matrix().clone())];
    model.visit_params(&mut |name, t| {
        if name != "embedding" {
            list.push((name.to_string(), t.clone()));
        }
    });
    list
}

pub fn save_checkpoint(
    model: &TanModel<f32>,
    config: &TrainConfig,
    best_val_f1: f64,
    epoch: u64,
    path: &Path,
) -> Result<(), TrainError> {
    let tensors = tensor_list(model);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel() as u64,
        });
        offset += t.numel() as u64;
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        inventory: model.inventory.names().to_vec(),
        vocab: model.embeddings.vocab().tokens().to_vec(),
        tensors: entries,
        best_val_f1,
        epoch,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(12 + header_bytes.len() + offset as usize * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for (_, t) in &tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(TanModel<f32>, CheckpointMeta), TrainError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(TrainError::Corrupt("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().expect("four bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err(TrainError::Corrupt("checksum mismatch".into()));
    }
    if &body[..4] != MAGIC {
        return Err(TrainError::Corrupt("bad magic bytes".into()));
    }
    let header_len = u32::from_le_bytes(body[4..8].try_into().expect("four bytes")) as usize;
    if body.len() < 8 + header_len {
        return Err(TrainError::Corrupt("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[8..8 + header_len])?;
    if header.version != CHECKPOINT_VERSION {
        return Err(TrainError::UnsupportedVersion(header.version));
    }

    let payload = &body[8 + header_len..];
    let mut floats = Vec::with_capacity(payload.len() / 4);
    if payload.len() % 4 != 0 {
        return Err(TrainError::Corrupt("payload not a whole number of f32s".into()));
    }
    for chunk in payload.chunks_exact(4) {
        floats.push(f32::from_le_bytes(chunk.try_into().expect("four bytes")));
    }

    let mut read_tensor = |name: &str| -> Result<Tensor<f32>, TrainError> {
        let entry = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| TrainError::MissingTensor(name.to_string()))?;
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        if end > floats.len() {
            return Err(TrainError::Corrupt(format!("tensor {name} overruns payload")));
        }
        Tensor::new(entry.shape.clone(), floats[start..end].to_vec())
            .map_err(|_| TrainError::BadShape(name.to_string()))
    };

    let embedding = read_tensor("embedding")?;
    let vocab = Vocabulary::from_tokens(header.vocab.clone());
    if vocab.len() != embedding.rows() {
        return Err(TrainError::BadShape("embedding".into()));
    }
    let table = EmbeddingTable::from_parts(vocab, embedding);
    let inventory = CategoryInventory::from_names(header.inventory.clone());

    // Materialize the right parameter structure, then overwrite every
    // tensor from the directory.
    let mut model = TanModel::init(header.config.model.clone(), inventory, table, 0);
    let mut failure: Option<TrainError> = None;
    model.visit_params_mut(&mut |name, t| {
        if failure.is_some() || name == "embedding" {
            return;
        }
        match read_tensor(name) {
            Ok(stored) if stored.shape() == t.shape() => *t = stored,
            Ok(_) => failure = Some(TrainError::BadShape(name.to_string())),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let meta = CheckpointMeta {
        config: header.config,
        best_val_f1: header.best_val_f1,
        epoch: header.epoch,
    };
    Ok((model, meta))
}
