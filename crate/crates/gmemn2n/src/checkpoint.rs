//! Model checkpoints: a single JSON document holding the format version,
//! variants and configs, the vocabulary, every named tensor, and the tying
//! map. Serialization order is fixed (struct fields, then insertion-ordered
//! maps), so identical models produce byte-identical files; floats use
//! Rust's shortest round-trip decimal form, which is bit-faithful.

use crate::config::TrainConfig;
use crate::corpus::Vocabulary;
use crate::encoding::EncodingConfig;
use crate::model::{Head, ModelParams, ModelVariant, ParamRef};
use crate::tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("tensor `{name}` has {len} values for shape {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        rows: usize,
        cols: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: (usize, usize),
    pub row_major_values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub variant: ModelVariant,
    pub head: Head,
    pub hops: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub encoding: EncodingConfig,
    pub train: TrainConfig,
    pub rng_seed: u64,
    pub vocab: Vec<String>,
    /// Storage tensors in creation order.
    pub params: Vec<(String, TensorRecord)>,
    /// Logical name -> storage reference.
    pub tying_map: Vec<(String, ParamRef)>,
}

impl Checkpoint {
    pub fn from_model(
        params: &ModelParams,
        vocab: &Vocabulary,
        encoding: &EncodingConfig,
        train: &TrainConfig,
        rng_seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            variant: params.variant,
            head: params.head,
            hops: params.hops,
            dim: params.dim,
            vocab_size: params.vocab_size,
            encoding: encoding.clone(),
            train: train.clone(),
            rng_seed,
            vocab: vocab.words().to_vec(),
            params: params
                .store
                .iter()
                .map(|(name, t)| {
                    (
                        name.clone(),
                        TensorRecord {
                            shape: t.shape(),
                            row_major_values: t.values().to_vec(),
                        },
                    )
                })
                .collect(),
            tying_map: params
                .tying
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Rebuilds runtime parameters; validates tensor shapes.
    pub fn to_model(&self) -> Result<ModelParams, CheckpointError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CheckpointError::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut store = ParamStore::new();
        for (name, rec) in &self.params {
            let (rows, cols) = rec.shape;
            if rec.row_major_values.len() != rows * cols {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    rows,
                    cols,
                    len: rec.row_major_values.len(),
                });
            }
            store.insert(
                name.clone(),
                Tensor::from_vec(rows, cols, rec.row_major_values.clone()),
            );
        }
        let tying = self
            .tying_map
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ModelParams {
            store,
            tying,
            variant: self.variant,
            head: self.head,
            hops: self.hops,
            dim: self.dim,
            vocab_size: self.vocab_size,
            temporal: self.encoding.temporal,
        })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_words(self.vocab.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialization")
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(CheckpointError::FormatVersion {
                found: ckpt.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(ckpt)
    }
}
