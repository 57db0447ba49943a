//! `.rsid` model files.
//!
//! ```text
//! offset 0   4 bytes   magic "RSID"
//! offset 4   u32 LE    format version
//! offset 8   u32 LE    metadata length N
//! offset 12  N bytes   UTF-8 JSON metadata: config, labels, tensor manifest
//! offset 12+N          tensor data, little-endian f32, in manifest order
//! ```
//!
//! Manifest offsets are relative to the start of the tensor data.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabelVocab;
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"RSID";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    labels: LabelVocab,
    tensors: Vec<TensorEntry>,
}

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Serializes `model`; tensors are stored as `f32`.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut entries = Vec::new();
    for p in model.tensors() {
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            trainable: Model::is_trainable(&p.name),
        });
        offset += 4 * p.value.len() as u64;
    }
    let meta = Metadata {
        config: model.config.clone(),
        labels: model.labels.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.tensors() {
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN {
        return Err(format_error(bytes.len(), "file shorter than the 12-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_error(0, "bad magic, not a model file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_error(4, format!("unsupported format version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let data_start = HEADER_LEN + meta_len;
    if bytes.len() < data_start {
        return Err(format_error(bytes.len(), "truncated metadata"));
    }
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..data_start])
        .map_err(|e| format_error(HEADER_LEN, format!("invalid metadata: {e}")))?;
    meta.config
        .validate()
        .map_err(|e| format_error(HEADER_LEN, format!("invalid config: {e}")))?;

    let mut model = build_model(&meta.config, meta.labels, 0)
        .map_err(|e| format_error(HEADER_LEN, e.to_string()))?;
    let mut slots = model.tensors_mut();
    if slots.len() != meta.tensors.len() {
        return Err(format_error(
            HEADER_LEN,
            format!("manifest lists {} tensors, config implies {}", meta.tensors.len(), slots.len()),
        ));
    }
    let data = &bytes[data_start..];
    let mut expected_offset = 0u64;
    for (slot, entry) in slots.iter_mut().zip(&meta.tensors) {
        if entry.name != slot.name || entry.shape != slot.value.shape() {
            return Err(format_error(
                HEADER_LEN,
                format!(
                    "manifest entry {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    slot.name,
                    slot.value.shape()
                ),
            ));
        }
        if entry.offset != expected_offset {
            return Err(format_error(HEADER_LEN, format!("tensor {} has offset {}, expected {expected_offset}", entry.name, entry.offset)));
        }
        let start = entry.offset as usize;
        let end = start + 4 * slot.value.len();
        if end > data.len() {
            return Err(format_error(data_start + data.len(), format!("truncated data for tensor {}", entry.name)));
        }
        for (v, chunk) in slot.value.data_mut().iter_mut().zip(data[start..end].chunks_exact(4)) {
            let f = f32::from_le_bytes(chunk.try_into().unwrap());
            if !f.is_finite() {
                return Err(format_error(data_start + start, format!("non-finite value in tensor {}", entry.name)));
            }
            *v = f64::from(f);
        }
        expected_offset = end as u64;
    }
    if expected_offset as usize != data.len() {
        return Err(format_error(
            data_start + expected_offset as usize,
            "trailing bytes after tensor data",
        ));
    }
    drop(slots);
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let cfg = ModelConfig {
            n_blocks: 1,
            d_b: 3,
            conv_filters: 2,
            gru_hidden: 2,
            n_classes: 2,
            max_len: 8,
            ..Default::default()
        };
        build_model(&cfg, LabelVocab::from_labels(["a", "b"]), 5).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn header_errors_carry_offsets() {
        let bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(matches!(from_bytes(&bytes[..6]), Err(Error::Format { .. })));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format { .. })));
    }
}
