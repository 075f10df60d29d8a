//! Option files accepted by `--config`. Each is TOML; unknown keys are
//! rejected and every key has a default, so an empty file is valid.
//! Command-line flags override file values.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adapt::{MaskingConfig, ModelSpec, StageConfig, TokenizerConfig};
use crate::corpus::CleanConfig;
use crate::eval::Smoothing;
use crate::model::DecodeConfig;
use crate::orthography::AugmentConfig;

pub type CleanOptions = CleanConfig;
pub type AugmentOptions = AugmentConfig;
pub type TokenizeOptions = TokenizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    pub train_frac: f64,
    pub dev_frac: f64,
    pub test_frac: f64,
    /// Share of the train split to keep.
    pub fraction: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { train_frac: 0.8, dev_frac: 0.1, test_frac: 0.1, fraction: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOptions {
    /// Used only when no initial checkpoint is given.
    pub model: ModelSpec,
    pub masking: MaskingConfig,
    pub stage: StageConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktranslateOptions {
    pub decode: DecodeConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TatOptions {
    /// Also train real pairs in the synthetic direction.
    pub both_orientations: bool,
    pub stage: StageConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneOptions {
    pub stage: StageConfig,
    pub decode: DecodeConfig,
    pub bleu_smoothing: Smoothing,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslateOptions {
    pub decode: DecodeConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyOptions {
    /// Also print the class probabilities.
    pub probabilities: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateOptions {
    pub bleu_smoothing: Smoothing,
}

/// Parses an option file, or returns the defaults when `path` is `None`.
pub fn load_options<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message()))
}
