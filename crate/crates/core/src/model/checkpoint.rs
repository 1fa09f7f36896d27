//! Checkpoint file: a JSON manifest (config, normalization stats, tensor
//! index) followed by the flat little-endian f64 weight blob. Round-trips
//! every parameter bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layout_of, ModelConfig, ModelError, ModelParameters, Normalization};

const MAGIC: &[u8; 8] = b"MSIMCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    normalization: Normalization,
    entries: Vec<TensorEntry>,
    scalar_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub normalization: Normalization,
}

fn tensor_entries(params: &ModelParameters) -> Vec<TensorEntry> {
    let mut entries = Vec::new();
    for view in &params.slots {
        let name = view.slot.name();
        let spec = view.spec;
        let shapes: [(&str, usize, usize); 8] = [
            ("w1", spec.hidden, spec.in_dim),
            ("b1", spec.hidden, 1),
            ("w2", spec.hidden, spec.hidden),
            ("b2", spec.hidden, 1),
            ("w3", spec.out_dim, spec.hidden),
            ("b3", spec.out_dim, 1),
            ("gamma", if spec.layer_norm { spec.out_dim } else { 0 }, 1),
            ("beta", if spec.layer_norm { spec.out_dim } else { 0 }, 1),
        ];
        let mut at = view.offset;
        for (suffix, rows, cols) in shapes {
            let len = rows * cols;
            if len == 0 {
                continue;
            }
            entries.push(TensorEntry {
                name: format!("{name}.{suffix}"),
                offset: at,
                rows,
                cols,
            });
            at += len;
        }
    }
    entries
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters,
    normalization: &Normalization,
) -> Result<(), ModelError> {
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: params.config.clone(),
        normalization: normalization.clone(),
        entries: tensor_entries(params),
        scalar_count: params.data.len(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + 8 * params.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for v in &params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| ModelError::CheckpointIo(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path).map_err(|e| ModelError::CheckpointIo(e.to_string()))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ModelError::CheckpointFormat("bad magic".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + manifest_len {
        return Err(ModelError::CheckpointFormat("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::CheckpointFormat(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let blob = &bytes[16 + manifest_len..];
    if blob.len() != 8 * manifest.scalar_count {
        return Err(ModelError::CheckpointFormat(format!(
            "blob holds {} bytes, manifest names {} scalars",
            blob.len(),
            manifest.scalar_count
        )));
    }
    let slots = layout_of(&manifest.config);
    let expected = slots.last().map_or(0, |s| s.offset + s.len());
    if expected != manifest.scalar_count {
        return Err(ModelError::CheckpointFormat(format!(
            "config implies {expected} scalars, manifest names {}",
            manifest.scalar_count
        )));
    }
    let data: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParameters {
        config: manifest.config,
        slots,
        data,
    };
    // The tensor index is reproducible from the config; verify it matches.
    let rebuilt = tensor_entries(&params);
    if rebuilt.len() != manifest.entries.len()
        || rebuilt
            .iter()
            .zip(&manifest.entries)
            .any(|(a, b)| a.name != b.name || a.offset != b.offset)
    {
        return Err(ModelError::CheckpointFormat(
            "tensor index does not match the config layout".into(),
        ));
    }
    Ok(Checkpoint {
        params,
        normalization: manifest.normalization,
    })
}
