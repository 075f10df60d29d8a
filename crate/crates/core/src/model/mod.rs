//! A small encoder-decoder transformer trained from scratch: forward pass,
//! seq2seq / masked-LM / classification losses, Adam, decoding, checkpoint
//! files and finite-difference gradient verification.
//!
//! All arithmetic is `f64`. Checkpoint files store `f32`.

mod batch;
mod checkpoint;
mod config;
mod decode;
pub mod graph;
mod gradcheck;
mod loss;
mod optim;
mod params;
mod tensor;
mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{Batch, ClassBatch, MaskedBatch};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, SHARED_VOCAB};
pub use decode::{classify, predict_class, translate, DecodeConfig, DecodeMode};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use loss::{classify_loss, forward, mlm_loss, seq2seq_loss, Objective};
pub use optim::{clip_global_norm, train_step, OptimizerState, StepStats, TrainHyper};
pub use params::ParamStore;
pub use tensor::Mat;
pub use transformer::{sinusoid, NUM_CLASSES};

use transformer::Layout;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence length {len} exceeds max_len {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("batch has no target tokens")]
    EmptyTargets,
    #[error("batch has no masked positions")]
    NoMaskedPositions,
    #[error("empty input")]
    EmptyInput,
    #[error("class label {label} outside the {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("stage {next:?} cannot follow {last:?} in checkpoint lineage")]
    LineageOrder { last: Stage, next: Stage },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training stage tags recorded in checkpoint lineage, in pipeline order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Cat,
    Tat,
    Ft,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Cat => "cat",
            Stage::Tat => "tat",
            Stage::Ft => "ft",
        }
    }
}

/// Whether `lineage` starts with one `init` and never steps backwards in
/// pipeline order.
pub fn lineage_is_ordered(lineage: &[Stage]) -> bool {
    lineage.first() == Some(&Stage::Init)
        && lineage[1..].iter().all(|s| *s != Stage::Init)
        && lineage.windows(2).all(|w| w[0] <= w[1])
}

/// Model configuration, parameters and provenance.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    lineage: Vec<Stage>,
    seed: u64,
    step: u64,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.lineage == other.lineage
            && self.seed == other.seed
            && self.step == other.step
    }
}

impl Checkpoint {
    pub(crate) fn from_parts(
        config: ModelConfig,
        params: ParamStore,
        lineage: Vec<Stage>,
        seed: u64,
        step: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = transformer::expected_shapes(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Format(format!("expected {} tensors, found {}", expected.len(), params.len())));
        }
        for (i, (name, r, c)) in expected.iter().enumerate() {
            let got = params.get(i);
            if params.name(i) != name || got.shape() != (*r, *c) {
                return Err(ModelError::Format(format!(
                    "tensor {i}: expected {name} {r}x{c}, found {} {}x{}",
                    params.name(i),
                    got.rows(),
                    got.cols()
                )));
            }
        }
        if !lineage_is_ordered(&lineage) {
            return Err(ModelError::Format(format!("lineage {lineage:?} is not in pipeline order")));
        }
        let layout = transformer::layout_for(&config);
        Ok(Checkpoint { config, params, layout, lineage, seed, step })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn lineage(&self) -> &[Stage] {
        &self.lineage
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Appends a stage tag; tags may repeat but never move backwards.
    pub fn push_stage(&mut self, next: Stage) -> Result<(), ModelError> {
        let last = *self.lineage.last().expect("lineage starts with init");
        if next == Stage::Init || next < last {
            return Err(ModelError::LineageOrder { last, next });
        }
        self.lineage.push(next);
        Ok(())
    }

    pub(crate) fn net(&self) -> transformer::Net<'_> {
        transformer::Net { cfg: &self.config, layout: &self.layout }
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    /// Zeroes the classification head.
    pub fn zero_class_head(&mut self) {
        let (w, b) = (self.layout.cls_w, self.layout.cls_b);
        for idx in [w, b] {
            for v in self.params.get_mut(idx).data_mut() {
                *v = 0.0;
            }
        }
    }

    /// Re-draws the classification head from `seed`, leaving other weights intact.
    pub fn reset_class_head(&mut self, seed: u64) {
        let fresh = transformer::init_params(&self.config, &mut ChaCha8Rng::seed_from_u64(seed));
        for idx in [self.layout.cls_w, self.layout.cls_b] {
            *self.params.get_mut(idx) = fresh.get(idx).clone();
        }
        self.round_to_storage_precision();
    }

    /// Rounds every parameter to the nearest f32, the precision checkpoint
    /// files store. Training stages call this on exit so an in-memory result
    /// and its saved copy behave identically.
    pub fn round_to_storage_precision(&mut self) {
        for m in self.params.values_mut() {
            for v in m.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Content hash of configuration and parameters (hex SHA-256).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, m) in self.params.iter() {
            h.update(name.as_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Fresh checkpoint with lineage `[init]`, deterministic in `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = transformer::init_params(config, &mut rng);
    let mut ckpt = Checkpoint::from_parts(config.clone(), params, vec![Stage::Init], seed, 0)?;
    ckpt.round_to_storage_precision();
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny(50);
        let a = init_model(&cfg, 7).unwrap();
        let b = init_model(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a, init_model(&cfg, 8).unwrap());
        assert_eq!(a.lineage(), &[Stage::Init]);
    }

    #[test]
    fn init_rejects_bad_heads() {
        let mut cfg = ModelConfig::tiny(50);
        cfg.d_model = 7;
        assert!(init_model(&cfg, 0).is_err());
    }

    #[test]
    fn lineage_is_append_only_in_order() {
        let mut c = init_model(&ModelConfig::tiny(20), 0).unwrap();
        c.push_stage(Stage::Cat).unwrap();
        c.push_stage(Stage::Cat).unwrap();
        c.push_stage(Stage::Ft).unwrap();
        assert!(c.push_stage(Stage::Tat).is_err());
        assert!(c.push_stage(Stage::Init).is_err());
        assert!(lineage_is_ordered(c.lineage()));
        assert!(!lineage_is_ordered(&[Stage::Cat]));
        assert!(!lineage_is_ordered(&[Stage::Init, Stage::Ft, Stage::Cat]));
    }
}
