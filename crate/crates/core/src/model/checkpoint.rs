use super::{MlpArch, MlpModel, ModelError};
use crate::mask::MaskHeader;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// JSON sidecar written next to the raw parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: MlpArch,
    pub init_seed: u64,
    /// One entry per weight matrix; `None` for unmasked layers.
    pub masks: Vec<Option<MaskHeader>>,
    pub parameter_count: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

/// Writes parameters as little-endian `f64` to `path` and metadata to
/// `path.json`.
pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<(), ModelError> {
    let flat = model.flat_parameters();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let meta = CheckpointMeta {
        arch: model.arch().clone(),
        init_seed: model.seed(),
        masks: model.mask_headers(),
        parameter_count: flat.len(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Rebuilds a model from a checkpoint. Masks are regenerated from their
/// seeds and must reproduce the recorded headers, and every masked position
/// of the stored weights must be zero.
pub fn load_checkpoint(path: &Path) -> Result<MlpModel, ModelError> {
    let json = fs::read_to_string(sidecar_path(path))?;
    let meta: CheckpointMeta = serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut model = MlpModel::init(&meta.arch, meta.init_seed)?;
    let headers = model.mask_headers();
    if headers != meta.masks {
        return Err(ModelError::Checkpoint(
            "regenerated masks do not match the recorded headers".into(),
        ));
    }
    for (l, layer) in model.layers().iter().enumerate() {
        if let (Some(mask), Some(h)) = (layer.mask(), &meta.masks[l]) {
            if mask.keep_count() != h.keep_count || mask.bits().count_ones() != h.keep_count {
                return Err(ModelError::Checkpoint(format!("keep count mismatch in layer {l}")));
            }
        }
    }
    let bytes = fs::read(path)?;
    if bytes.len() != meta.parameter_count * 8 {
        return Err(ModelError::Checkpoint(format!(
            "expected {} bytes of parameters, found {}",
            meta.parameter_count * 8,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    model.set_flat_parameters(&flat)?;
    for (l, layer) in model.layers().iter().enumerate() {
        if let Some(mask) = layer.mask() {
            let leaked = layer
                .weights()
                .iter()
                .enumerate()
                .any(|(i, &w)| w != 0.0 && !mask.is_kept(i));
            if leaked {
                return Err(ModelError::Checkpoint(format!(
                    "layer {l} has nonzero weights at masked positions"
                )));
            }
        }
    }
    Ok(model)
}
