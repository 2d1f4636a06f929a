//! `model.json` manifest plus `model.ckpt`, a flat array of little-endian
//! `f64` values. Parameters appear in [`TideModel::map`] order, each
//! row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelDims, TideModel};
use crate::autodiff::Tensor;

pub const CHECKPOINT_FORMAT: &str = "tide-checkpoint/1";
pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "model.ckpt";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Index of the first value in the flat array.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dims: ModelDims,
    pub seed: u64,
    /// SHA-256 of the compact JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub params: Vec<ParamInfo>,
    pub total: usize,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes both files into `dir`, creating it if needed.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &TideModel,
    seed: u64,
    config: serde_json::Value,
) -> Result<Manifest, CheckpointError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut params = Vec::new();
    let mut bytes = Vec::with_capacity(model.num_params() * 8);
    for (name, t) in model.named_params() {
        params.push(ParamInfo {
            name,
            rows: t.rows(),
            cols: t.cols(),
            offset: bytes.len() / 8,
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        dims: model.dims,
        seed,
        config_hash: config_hash(&config),
        config,
        params,
        total: bytes.len() / 8,
    };
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, &bytes).map_err(io(&weights))?;
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io(&path))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(TideModel, Manifest), CheckpointError> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
            path: path.clone(),
            source,
        })?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Mismatch(format!(
            "unknown format {:?}",
            manifest.format
        )));
    }
    let weights = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&weights).map_err(io(&weights))?;
    if bytes.len() != manifest.total * 8 {
        return Err(CheckpointError::Mismatch(format!(
            "{} holds {} bytes, manifest expects {} values",
            weights.display(),
            bytes.len(),
            manifest.total
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let template = TideModel::init(manifest.dims, 0);
    let expected = template.named_params();
    if expected.len() != manifest.params.len() {
        return Err(CheckpointError::Mismatch(format!(
            "expected {} parameters, manifest lists {}",
            expected.len(),
            manifest.params.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for ((name, t), info) in expected.iter().zip(&manifest.params) {
        if *name != info.name || t.shape() != (info.rows, info.cols) {
            return Err(CheckpointError::Mismatch(format!(
                "parameter {} {:?} does not match {} {:?}",
                info.name,
                (info.rows, info.cols),
                name,
                t.shape()
            )));
        }
        let end = info.offset + info.rows * info.cols;
        let slice = values
            .get(info.offset..end)
            .ok_or_else(|| CheckpointError::Mismatch(format!("{} runs past the end", info.name)))?;
        let tensor = Tensor::from_vec(info.rows, info.cols, slice.to_vec())
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        tensors.push(tensor);
    }
    Ok((TideModel::from_flat(&template, tensors), manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dims = ModelDims {
            input: 3,
            hidden: 5,
            latent: 4,
            classes: 2,
        };
        let m = TideModel::init(dims, 8);
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"lr": 0.01, "epochs": 3});
        let saved = save_checkpoint(dir.path(), &m, 8, cfg).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest, saved);
        assert_eq!(manifest.config_hash.len(), 64);
        let len = fs::metadata(dir.path().join(WEIGHTS_FILE)).unwrap().len();
        assert_eq!(len as usize, m.num_params() * 8);
    }

    #[test]
    fn truncated_weights_rejected() {
        let dims = ModelDims {
            input: 2,
            hidden: 3,
            latent: 2,
            classes: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(
            dir.path(),
            &TideModel::init(dims, 0),
            0,
            serde_json::Value::Null,
        )
        .unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&w).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&w, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(CheckpointError::Mismatch(_))
        ));
    }
}
