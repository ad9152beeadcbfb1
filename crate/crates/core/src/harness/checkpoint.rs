//! JSON checkpoints. Floats are written with shortest round-trip formatting
//! and parsed exactly, so save followed by load is bit-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{ParamStore, Tensor};

use super::model::ModelParams;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("parameter `{name}` has shape {shape:?} but {values} values")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        values: usize,
    },
    #[error("parameter `{0}` is listed twice")]
    Duplicate(String),
    #[error("parameter `{0}` is not finite")]
    NonFinite(String),
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    d: usize,
    vocab_hash: String,
    encoder: String,
    params: Vec<ParamEntry>,
}

/// Serialized form of `model`. Parameters appear in name order.
pub fn to_json(model: &ModelParams) -> Result<String, CheckpointError> {
    let params = model
        .store
        .iter()
        .map(|(name, t)| {
            if !t.is_finite() {
                return Err(CheckpointError::NonFinite(name.to_string()));
            }
            Ok(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        d: model.d,
        vocab_hash: model.vocab_hash.clone(),
        encoder: model.encoder.clone(),
        params,
    };
    serde_json::to_string(&file).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn from_json(text: &str) -> Result<ModelParams, CheckpointError> {
    // Peek at the version first so a future layout reports a version error
    // rather than a parse error.
    let header: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let found = header
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CheckpointError::Malformed("missing `version`".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(CheckpointError::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut store = ParamStore::new();
    for entry in file.params {
        if store.contains(&entry.name) {
            return Err(CheckpointError::Duplicate(entry.name));
        }
        let values = entry.values.len();
        let tensor = Tensor::new(entry.shape.clone(), entry.values).map_err(|_| {
            CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                shape: entry.shape,
                values,
            }
        })?;
        store.insert(entry.name, tensor);
    }
    Ok(ModelParams {
        encoder: file.encoder,
        d: file.d,
        vocab_hash: file.vocab_hash,
        store,
    })
}

pub fn save(model: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let text = to_json(model)?;
    std::fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path) -> Result<ModelParams, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        let mut store = ParamStore::new();
        store.insert(
            "a",
            Tensor::new(vec![2, 2], vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]).unwrap(),
        );
        store.insert(
            "b",
            Tensor::vector(vec![f64::MIN_POSITIVE, std::f64::consts::PI]),
        );
        ModelParams {
            encoder: "attention".into(),
            d: 2,
            vocab_hash: "abc".into(),
            store,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let text = to_json(&m).unwrap();
        let back = from_json(&text).unwrap();
        for ((_, x), (_, y)) in m.store.iter().zip(back.store.iter()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(to_json(&back).unwrap(), text);
    }

    #[test]
    fn rejects_bad_files() {
        let text = to_json(&model()).unwrap();
        assert!(matches!(
            from_json(&text[..text.len() / 2]),
            Err(CheckpointError::Malformed(_))
        ));
        let v2 = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            from_json(&v2),
            Err(CheckpointError::Version {
                found: 2,
                expected: 1
            })
        ));
        let bad_shape = text.replacen("[2,2]", "[3,2]", 1);
        assert!(matches!(
            from_json(&bad_shape),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn refuses_non_finite() {
        let mut m = model();
        m.store.get_mut("a").unwrap().data_mut()[0] = f64::NAN;
        assert!(matches!(to_json(&m), Err(CheckpointError::NonFinite(_))));
    }
}
