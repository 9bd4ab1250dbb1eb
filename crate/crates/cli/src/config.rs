//! Optional TOML defaults. Precedence: flags, then this file, then built-ins.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: Option<bool>,
    pub prepare: PrepareSection,
    pub train: TrainSection,
    pub chain: ChainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub direction: Option<String>,
    pub min_count: Option<usize>,
    pub lowercase: Option<bool>,
    pub embeddings: Option<PathBuf>,
    pub embeddings_format: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub attention: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden: Option<usize>,
    pub embed_dim: Option<usize>,
    pub lr: Option<f64>,
    pub clip_norm: Option<f64>,
    pub embeddings: Option<String>,
    pub direction: Option<String>,
    pub eval_every: Option<u64>,
    pub dev_sample: Option<usize>,
    pub top_k: Option<usize>,
    pub max_steps: Option<u64>,
    pub max_decode_len: Option<usize>,
    pub input_feeding: Option<bool>,
    pub freeze_pretrained: Option<bool>,
    pub untie_embeddings: Option<bool>,
    pub train_limit: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub max_len: Option<usize>,
    pub canon: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Option<String>,
    pub annotate: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// First of flag, file value, default.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}
