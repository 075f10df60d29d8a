use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters of the encoder-decoder transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub preset_name: Option<String>,
}

/// Vocabulary size of the `paper-word` and `paper-bpe` presets.
pub const SHARED_VOCAB: usize = 4000;

impl ModelConfig {
    /// Word-level JW300 baseline: 4-4 layers, 10 heads, 300-dim embeddings.
    pub fn paper_word() -> Self {
        ModelConfig {
            enc_layers: 4,
            dec_layers: 4,
            heads: 10,
            d_model: 300,
            d_ff: 4 * 300,
            vocab_size: SHARED_VOCAB,
            max_len: 256,
            dropout: 0.1,
            preset_name: Some("paper-word".into()),
        }
    }

    /// BPE JW300 baseline: 6-6 layers, 4 heads, 256-dim embeddings.
    pub fn paper_bpe() -> Self {
        ModelConfig {
            enc_layers: 6,
            dec_layers: 6,
            heads: 4,
            d_model: 256,
            d_ff: 4 * 256,
            vocab_size: SHARED_VOCAB,
            max_len: 256,
            dropout: 0.1,
            preset_name: Some("paper-bpe".into()),
        }
    }

    /// The 2-2 layer, 2 head, 32-dim model used for verification and desk runs.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            heads: 2,
            d_model: 32,
            d_ff: 64,
            vocab_size,
            max_len: 64,
            dropout: 0.0,
            preset_name: Some("tiny".into()),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-word" => Some(Self::paper_word()),
            "paper-bpe" => Some(Self::paper_bpe()),
            "tiny" => Some(Self::tiny(100)),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_shapes() {
        let w = ModelConfig::paper_word();
        assert_eq!((w.enc_layers, w.dec_layers, w.heads, w.d_model), (4, 4, 10, 300));
        assert_eq!(w.head_dim(), 30);
        let b = ModelConfig::paper_bpe();
        assert_eq!((b.enc_layers, b.dec_layers, b.heads, b.d_model), (6, 6, 4, 256));
        assert_eq!(w.vocab_size, 4000);
        assert_eq!(b.vocab_size, 4000);
        w.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut c = ModelConfig::tiny(10);
        c.d_model = 7;
        c.heads = 2;
        assert!(matches!(c.validate(), Err(ModelError::InvalidConfig(_))));
    }
}
