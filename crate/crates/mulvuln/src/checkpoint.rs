//! Binary checkpoints.
//!
//! Layout: the magic line `mulvuln-ckpt-v1\n`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as little-endian `f64` in
//! manifest order. Offsets are relative to the start of the data block.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mulvuln_core::model::{ModelConfig, MulVulnModel};
use mulvuln_core::optim::OptimizerState;
use mulvuln_core::tensor::Tensor;
use mulvuln_core::train::{BestModel, TrainHistory, TrainState};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::serial::HistoryJson;

pub const MAGIC: &[u8] = b"mulvuln-ckpt-v1\n";
const MAGIC_PREFIX: &[u8] = b"mulvuln-ckpt-";
const FORMAT: &str = "mulvuln-ckpt-v1";

/// Keys that fix the parameter layout.
pub const STRUCTURAL_KEYS: &[&str] = &[
    "vocab_size",
    "n_layers",
    "n_heads",
    "d_model",
    "d_ffn",
    "max_positions",
    "pool_size",
    "prompt_len",
];

/// Every model key stored in the manifest, in the order they are applied.
pub const MODEL_KEYS: &[&str] = &[
    "vocab_size",
    "n_layers",
    "n_heads",
    "d_model",
    "d_ffn",
    "max_positions",
    "dropout",
    "pool_size",
    "prompt_len",
    "top_k",
    "matrices_per_language",
    "mode",
    "lambda",
    "query_from",
    "assignment",
];

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file")]
    NotCheckpoint,
    #[error("unsupported checkpoint version {found:?}, expected {FORMAT:?}")]
    Version { found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint {field} is {found}, configuration has {expected}")]
    ConfigMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error("checkpoint was written with tokenizer {found}, current tokenizer is {expected}")]
    Tokenizer { expected: String, found: String },
    #[error("checkpoint has no optimizer state to resume from")]
    NotResumable,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    epoch: usize,
    best_epoch: Option<usize>,
    best_val_f1: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: BTreeMap<String, String>,
    tokenizer_sha256: String,
    optimizer_step: Option<u64>,
    meta: Meta,
    history: Option<HistoryJson>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MulVulnModel,
    pub tokenizer_sha256: String,
    /// Epochs completed when this was written.
    pub epoch: usize,
    pub optimizer: Option<OptimizerState>,
    pub history: Option<TrainHistory>,
    pub best: Option<BestModel>,
}

pub fn config_entries(config: &ModelConfig) -> BTreeMap<String, String> {
    let rc = RunConfig {
        encoder: config.encoder.clone(),
        pool: config.pool.clone(),
        mode: config.mode,
        lambda: config.lambda,
        query_from: config.query_from,
        assignment: Some(config.assignment.clone()),
        ..RunConfig::default()
    };
    MODEL_KEYS
        .iter()
        .map(|&k| {
            let v = if k == "vocab_size" {
                config.vocab_size.to_string()
            } else {
                rc.get(k).expect("model key")
            };
            (k.to_string(), v)
        })
        .collect()
}

pub fn config_from_entries(entries: &BTreeMap<String, String>) -> Result<ModelConfig, CheckpointError> {
    let mut rc = RunConfig::default();
    let mut vocab_size = None;
    for &k in MODEL_KEYS {
        let v = entries
            .get(k)
            .ok_or_else(|| CheckpointError::Corrupt(format!("config key {k} missing")))?;
        if k == "vocab_size" {
            vocab_size = Some(v.parse().map_err(|_| CheckpointError::Corrupt(format!("vocab_size {v:?}")))?);
        } else {
            rc.set(k, v).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
    }
    Ok(rc.model_config(vocab_size.expect("set above")))
}

/// Compares `keys` of two configurations; the first difference is reported.
pub fn check_config(found: &ModelConfig, expected: &ModelConfig, keys: &[&str]) -> Result<(), CheckpointError> {
    let f = config_entries(found);
    let e = config_entries(expected);
    for &k in keys {
        if f.get(k) != e.get(k) {
            return Err(CheckpointError::ConfigMismatch {
                field: k.to_string(),
                expected: e.get(k).cloned().unwrap_or_default(),
                found: f.get(k).cloned().unwrap_or_default(),
            });
        }
    }
    Ok(())
}

impl Checkpoint {
    /// Snapshot of a training run after `state.epochs_done` epochs.
    pub fn from_state(state: &TrainState, tokenizer_sha256: &str) -> Self {
        Checkpoint {
            model: state.model.clone(),
            tokenizer_sha256: tokenizer_sha256.to_string(),
            epoch: state.epochs_done,
            optimizer: Some(state.optimizer.clone()),
            history: Some(state.history.clone()),
            best: state.best.clone(),
        }
    }

    /// Weights only, e.g. the best model of a finished run.
    pub fn from_best(best: &BestModel, tokenizer_sha256: &str) -> Self {
        Checkpoint {
            model: best.model.clone(),
            tokenizer_sha256: tokenizer_sha256.to_string(),
            epoch: best.epoch,
            optimizer: None,
            history: None,
            best: Some(best.clone()),
        }
    }

    pub fn into_state(self) -> Result<TrainState, CheckpointError> {
        let (Some(optimizer), Some(history)) = (self.optimizer, self.history) else {
            return Err(CheckpointError::NotResumable);
        };
        if !optimizer.matches(self.model.params()) {
            return Err(CheckpointError::Corrupt("optimizer state does not match parameters".into()));
        }
        Ok(TrainState {
            model: self.model,
            optimizer,
            epochs_done: self.epoch,
            history,
            best: self.best,
        })
    }

    pub fn check_tokenizer(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.tokenizer_sha256 != expected {
            return Err(CheckpointError::Tokenizer {
                expected: expected.to_string(),
                found: self.tokenizer_sha256.clone(),
            });
        }
        Ok(())
    }

    fn best_is_current(&self) -> bool {
        self.best
            .as_ref()
            .is_none_or(|b| b.epoch == self.epoch && b.model == self.model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        for (_, name, t) in self.model.params().iter() {
            tensors.push((name.to_string(), t));
        }
        let mut moments: Vec<(String, Tensor)> = Vec::new();
        if let Some(opt) = &self.optimizer {
            for (id, name, t) in self.model.params().iter() {
                moments.push((format!("adam.m.{name}"), Tensor::new(t.shape.clone(), opt.m[id.0].clone()).expect("shape")));
                moments.push((format!("adam.v.{name}"), Tensor::new(t.shape.clone(), opt.v[id.0].clone()).expect("shape")));
            }
        }
        tensors.extend(moments.iter().map(|(n, t)| (n.clone(), t)));
        if !self.best_is_current() {
            let best = self.best.as_ref().expect("checked");
            for (_, name, t) in best.model.params().iter() {
                tensors.push((format!("best.{name}"), t));
            }
        }

        let mut entries = Vec::with_capacity(tensors.len());
        let mut data = Vec::new();
        for (name, t) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: "f64".into(),
                offset: data.len() as u64,
            });
            for x in &t.data {
                data.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            config: config_entries(self.model.config()),
            tokenizer_sha256: self.tokenizer_sha256.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            meta: Meta {
                epoch: self.epoch,
                best_epoch: self.best.as_ref().map(|b| b.epoch),
                best_val_f1: self.best.as_ref().map(|b| b.val_f1),
            },
            history: self.history.as_ref().map(Into::into),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if !bytes.starts_with(MAGIC) {
            if bytes.starts_with(MAGIC_PREFIX) {
                let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len().min(32));
                return Err(CheckpointError::Version {
                    found: String::from_utf8_lossy(&bytes[..end]).into_owned(),
                });
            }
            return Err(CheckpointError::NotCheckpoint);
        }
        let rest = &bytes[MAGIC.len()..];
        let len_bytes: [u8; 8] = rest
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
        let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| CheckpointError::Corrupt("manifest length".into()))?;
        let rest = &rest[8..];
        let json = rest
            .get(..len)
            .ok_or_else(|| CheckpointError::Corrupt("truncated manifest".into()))?;
        let data = &rest[len..];
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(CheckpointError::Version { found: manifest.format });
        }
        let config = config_from_entries(&manifest.config)?;

        let mut expected_offset = 0u64;
        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut order = Vec::new();
        for e in &manifest.tensors {
            if e.dtype != "f64" {
                return Err(CheckpointError::Corrupt(format!("{}: dtype {}", e.name, e.dtype)));
            }
            if e.offset != expected_offset {
                return Err(CheckpointError::Corrupt(format!("{}: offset {} expected {expected_offset}", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 8 * n)
                .ok_or_else(|| CheckpointError::Corrupt(format!("{}: data truncated", e.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected_offset += 8 * n as u64;
            order.push(e.name.clone());
            let t = Tensor::new(e.shape.clone(), values).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate tensor {}", e.name)));
            }
        }
        if expected_offset != data.len() as u64 {
            return Err(CheckpointError::Corrupt(format!(
                "data block is {} bytes, manifest describes {expected_offset}",
                data.len()
            )));
        }

        let names: Vec<String> = order
            .iter()
            .filter(|n| !n.starts_with("adam.") && !n.starts_with("best."))
            .cloned()
            .collect();
        let take = |tensors: &mut BTreeMap<String, Tensor>, prefix: &str| -> Vec<(String, Tensor)> {
            names
                .iter()
                .filter_map(|n| tensors.remove(&format!("{prefix}{n}")).map(|t| (n.clone(), t)))
                .collect()
        };
        let params = take(&mut tensors, "");
        let model = MulVulnModel::from_params(config.clone(), params).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

        let optimizer = match manifest.optimizer_step {
            None => None,
            Some(step) => {
                let mut m = Vec::new();
                let mut v = Vec::new();
                for name in model.param_names() {
                    let get = |tensors: &mut BTreeMap<String, Tensor>, key: String| {
                        tensors
                            .remove(&key)
                            .map(|t| t.data)
                            .ok_or_else(|| CheckpointError::Corrupt(format!("missing {key}")))
                    };
                    m.push(get(&mut tensors, format!("adam.m.{name}"))?);
                    v.push(get(&mut tensors, format!("adam.v.{name}"))?);
                }
                Some(OptimizerState { step, m, v })
            }
        };

        let best_params = take(&mut tensors, "best.");
        let best = match (manifest.meta.best_epoch, manifest.meta.best_val_f1) {
            (Some(epoch), Some(val_f1)) => {
                let model = if best_params.is_empty() {
                    model.clone()
                } else {
                    MulVulnModel::from_params(config, best_params).map_err(|e| CheckpointError::Corrupt(e.to_string()))?
                };
                Some(BestModel { epoch, val_f1, model })
            }
            _ => None,
        };
        if let Some(name) = tensors.keys().next() {
            return Err(CheckpointError::Corrupt(format!("unexpected tensor {name}")));
        }

        Ok(Checkpoint {
            model,
            tokenizer_sha256: manifest.tokenizer_sha256,
            epoch: manifest.meta.epoch,
            optimizer,
            history: manifest.history.as_ref().map(Into::into),
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        let mut rc = RunConfig::default();
        rc.set("d_model", "8").unwrap();
        rc.set("d_ffn", "8").unwrap();
        rc.set("prompt_len", "2").unwrap();
        rc.model_config(20)
    }

    #[test]
    fn weights_only_round_trip() {
        let model = MulVulnModel::new(small_config(), 3).unwrap();
        let best = BestModel {
            epoch: 2,
            val_f1: 0.5,
            model,
        };
        let ck = Checkpoint::from_best(&best, "abc");
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.into_state().is_err());
    }

    #[test]
    fn state_with_distinct_best_round_trips() {
        let mut state = TrainState::new(MulVulnModel::new(small_config(), 1).unwrap());
        state.optimizer.step = 7;
        state.optimizer.m[0][0] = 0.25;
        state.epochs_done = 3;
        state.best = Some(BestModel {
            epoch: 1,
            val_f1: 0.75,
            model: MulVulnModel::new(small_config(), 2).unwrap(),
        });
        let ck = Checkpoint::from_state(&state, "h");
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.into_state().unwrap(), state);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(Checkpoint::from_bytes(b"hello"), Err(CheckpointError::NotCheckpoint)));
        assert!(matches!(
            Checkpoint::from_bytes(b"mulvuln-ckpt-v9\n\0\0\0\0\0\0\0\0"),
            Err(CheckpointError::Version { found }) if found == "mulvuln-ckpt-v9"
        ));
        let model = MulVulnModel::new(small_config(), 3).unwrap();
        let best = BestModel { epoch: 1, val_f1: 0.0, model };
        let mut bytes = Checkpoint::from_best(&best, "x").to_bytes();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn mismatch_names_field() {
        let a = small_config();
        let mut b = a.clone();
        b.pool.prompt_len = 3;
        match check_config(&a, &b, STRUCTURAL_KEYS) {
            Err(CheckpointError::ConfigMismatch { field, expected, found }) => {
                assert_eq!((field.as_str(), expected.as_str(), found.as_str()), ("prompt_len", "3", "2"));
            }
            other => panic!("{other:?}"),
        }
        check_config(&a, &a, MODEL_KEYS).unwrap();
    }
}
