//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u64` little-endian header length, JSON header,
//! then every tensor's values as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamKind;
use crate::data::{FeatureSchema, NormalizationParams};
use crate::error::{Error, Result};
use crate::model::can::CanModel;
use crate::model::config::ModelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSCANCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub weights: String,
    pub biases: String,
    pub embeddings: String,
}

impl Default for InitScheme {
    fn default() -> Self {
        Self {
            weights: "glorot_uniform".into(),
            biases: "zeros".into(),
            embeddings: "normal(0, 0.01)".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub schema: FeatureSchema,
    pub normalization: NormalizationParams,
    pub seed: u64,
    pub init: InitScheme,
    pub tensors: Vec<TensorEntry>,
}

pub fn checkpoint_bytes(model: &CanModel) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for e in model.params().entries() {
        tensors.push(TensorEntry {
            name: e.name.clone(),
            kind: e.kind,
            shape: e.value.shape().to_vec(),
            offset,
        });
        offset += e.value.len();
        for x in e.value.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model_config: model.config.clone(),
        schema: model.schema.clone(),
        normalization: model.normalization,
        seed: model.seed,
        init: InitScheme::default(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses only the JSON header.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..len])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    Ok((header, &body[len..]))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<CanModel> {
    let (header, payload) = read_header(bytes)?;
    let mut model = CanModel::new(header.model_config, header.schema, header.normalization, header.seed)?;
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = model.params_mut();
    if header.tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, architecture expects {}",
            header.tensors.len(),
            params.len()
        )));
    }
    for entry in &header.tensors {
        let id = params
            .find(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", entry.name)))?;
        let target = params.get_mut(id);
        if target.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?}, expected {:?}",
                entry.name,
                entry.shape,
                target.shape()
            )));
        }
        let n = target.len();
        let src = values
            .get(entry.offset..entry.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the payload", entry.name)))?;
        target.data_mut().copy_from_slice(src);
    }
    if !model.params().all_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &CanModel, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CanModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
