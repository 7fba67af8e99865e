use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SstcConfig, SstcModel};
use crate::error::{Error, Result};
use crate::hsi::{sidecar_path, write_json};
use crate::tensor::Tensor;

const FORMAT: &str = "hypertta-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub tag: String,
    pub shape: Vec<usize>,
}

/// JSON sidecar of a checkpoint. `digest` covers the raw payload bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: SstcConfig,
    pub params: Vec<ParamEntry>,
    pub digest: String,
}

/// Writes the little-endian f64 payload to `path` and the manifest next to
/// it (`model.ckpt` -> `model.json`).
pub fn save_checkpoint(model: &SstcModel, path: &Path) -> Result<CheckpointManifest> {
    let mut payload = Vec::with_capacity(model.params().scalar_count() * 8);
    let mut params = Vec::new();
    for p in model.params().iter() {
        params.push(ParamEntry {
            tag: p.tag.clone(),
            shape: p.value.shape().to_vec(),
        });
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        config: model.config().clone(),
        params,
        digest: format!("sha256:{}", crate::hex(&Sha256::digest(&payload))),
    };
    fs::write(path, &payload).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &manifest)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<SstcModel> {
    let manifest_path = sidecar_path(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if manifest.format != FORMAT {
        return Err(bad(format!(
            "unknown checkpoint format `{}`",
            manifest.format
        )));
    }
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = format!("sha256:{}", crate::hex(&Sha256::digest(&payload)));
    if digest != manifest.digest {
        return Err(bad(format!(
            "payload digest {digest} != manifest {}",
            manifest.digest
        )));
    }
    let expected: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected * 8 {
        return Err(bad(format!(
            "payload has {} bytes, manifest needs {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut values = Vec::with_capacity(manifest.params.len());
    let mut chunks = payload.chunks_exact(8);
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let data = chunks
            .by_ref()
            .take(n)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push((entry.tag.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    let mut model = SstcModel::new(manifest.config)?;
    model.load_values(values)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SstcModel {
        let c = SstcConfig {
            patch_size: 3,
            kernel_sizes: vec![3],
            projected_dims: vec![8],
            branch_channels: 4,
            heads: 2,
            layers: 1,
            seed: 3,
            ..SstcConfig::default()
        }
        .with_data_shape(5, 4);
        SstcModel::new(c).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model();
        let manifest = save_checkpoint(&m, &path).unwrap();
        assert!(dir.path().join("model.json").exists());
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(manifest.params.len(), m.params().len());
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
        bytes.truncate(8);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
