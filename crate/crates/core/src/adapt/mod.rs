//! Training procedures: MLM masking, continual adaptive pre-training,
//! back-translation, task adaptive training, fine-tuning and the experiment
//! runner that strings them together.

mod bt;
mod experiment;
mod masking;
mod plan;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, LanguageTag};
use crate::eval::EvalError;
use crate::model::{Checkpoint, ModelError, Stage};
use crate::tokenize::{TokenizeError, TokenizerSpec};

pub use bt::{back_translate, bidirectional_bt, BtOutcome, BtReport};
pub use experiment::{
    load_config, run_experiment, sha256_file, Artifact, CellSpec, DataFiles, DataRegistry, ExperimentConfig,
    ExperimentOutput, ModelSpec, RunManifest, SettingSpec, StageTiming, TokenizerConfig,
};
pub use masking::{mask_tokens, mask_tokens_with, Masked, MaskingConfig};
pub use plan::{PlanStage, StageKind, TrainPlan};
pub use train::{
    cat_pretrain, finetune_classifier, finetune_translation, predict_labels, predict_probs, tat_train, translate_texts, StageConfig,
    StageOutcome, TrainLog,
};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{stage:?} diverged at step {step}: {source}")]
    Diverged { stage: Stage, step: u64, last_good: Box<Checkpoint>, source: ModelError },
    #[error("invalid masking config: {0}")]
    BadMasking(String),
    #[error("sequence has no maskable token")]
    NothingToMask,
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("no training data for {0}")]
    EmptyData(&'static str),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// A translation direction; the tag token is prepended to every source.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    pub tag_token: String,
}

impl Direction {
    pub fn new(src_lang: LanguageTag, tgt_lang: LanguageTag) -> Result<Self, AdaptError> {
        if src_lang == tgt_lang {
            return Err(AdaptError::Incompatible(format!("direction {src_lang:?} to itself")));
        }
        let tag_token = tgt_lang.direction_token();
        Ok(Direction { src_lang, tgt_lang, tag_token })
    }

    pub fn reversed(&self) -> Direction {
        Direction::new(self.tgt_lang.clone(), self.src_lang.clone()).expect("languages differ")
    }

    /// `src-tgt`, as used in report rows.
    pub fn label(&self) -> String {
        format!("{}-{}", self.src_lang.as_str(), self.tgt_lang.as_str())
    }

    pub fn tag_id(&self, tok: &TokenizerSpec) -> Result<u32, AdaptError> {
        match tok.vocab().id(&self.tag_token) {
            Some(id) if crate::tokenize::is_special(id) => Ok(id),
            _ => Err(AdaptError::Incompatible(format!("{} is not a reserved token", self.tag_token))),
        }
    }
}

/// Per-purpose seed derived from a root seed and a label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn check_tokenizer(ckpt: &Checkpoint, tok: &TokenizerSpec) -> Result<(), AdaptError> {
    if ckpt.config().vocab_size != tok.vocab_size() {
        return Err(AdaptError::Incompatible(format!(
            "model vocabulary {} vs tokenizer vocabulary {}",
            ckpt.config().vocab_size,
            tok.vocab_size()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_labels_and_tags() {
        let d = Direction::new(LanguageTag::eng(), LanguageTag::pcm()).unwrap();
        assert_eq!(d.label(), "eng-pcm");
        assert_eq!(d.tag_token, "<2pcm>");
        assert_eq!(d.reversed().tag_token, "<2eng>");
        assert!(Direction::new(LanguageTag::pcm(), LanguageTag::pcm()).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}
