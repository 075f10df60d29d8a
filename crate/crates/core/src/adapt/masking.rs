use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::tokenize::{is_special, MASK_ID, NUM_SPECIALS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    pub replace_with_mask: f64,
    pub random_token: f64,
    pub keep: f64,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig { mask_rate: 0.15, replace_with_mask: 0.8, random_token: 0.1, keep: 0.1, seed: 0 }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(AdaptError::BadMasking(format!("mask_rate {} outside (0, 1)", self.mask_rate)));
        }
        let parts = [self.replace_with_mask, self.random_token, self.keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(AdaptError::BadMasking(format!("scheme {parts:?} does not sum to 1")));
        }
        Ok(())
    }
}

/// A masked sequence with the original tokens at the selected positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Masked {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub labels: Vec<u32>,
}

impl Masked {
    /// Per-position targets in the form the MLM batch expects.
    pub fn targets(&self) -> Vec<Option<u32>> {
        let mut t = vec![None; self.ids.len()];
        for (&p, &l) in self.positions.iter().zip(&self.labels) {
            t[p] = Some(l);
        }
        t
    }
}

/// Masks `ids` with a generator seeded from `cfg.seed`.
pub fn mask_tokens(ids: &[u32], cfg: &MaskingConfig, vocab_size: usize) -> Result<Masked, AdaptError> {
    mask_tokens_with(ids, cfg, vocab_size, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Selects `max(1, round(rate * n))` non-special positions, `n` counting
/// non-special tokens, and rewrites each to `<mask>`, a random ordinary
/// token, or itself.
pub fn mask_tokens_with<R: Rng>(ids: &[u32], cfg: &MaskingConfig, vocab_size: usize, rng: &mut R) -> Result<Masked, AdaptError> {
    cfg.validate()?;
    let candidates: Vec<usize> = (0..ids.len()).filter(|&i| !is_special(ids[i])).collect();
    if candidates.is_empty() {
        return Err(AdaptError::NothingToMask);
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(AdaptError::BadMasking(format!("vocabulary of {vocab_size} has no ordinary tokens")));
    }
    let n = candidates.len();
    let k = ((cfg.mask_rate * n as f64).round() as usize).clamp(1, n);
    let mut positions: Vec<usize> = sample(rng, n, k).into_iter().map(|j| candidates[j]).collect();
    positions.sort_unstable();
    let mut out = ids.to_vec();
    let labels = positions.iter().map(|&p| ids[p]).collect();
    for &p in &positions {
        let u: f64 = rng.gen();
        if u < cfg.replace_with_mask {
            out[p] = MASK_ID;
        } else if u < cfg.replace_with_mask + cfg.random_token {
            out[p] = rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32);
        }
    }
    Ok(Masked { ids: out, positions, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::EOS_ID;

    #[test]
    fn selection_counts() {
        let cfg = MaskingConfig::default();
        let ids: Vec<u32> = (10..30).collect();
        assert_eq!(mask_tokens(&ids, &cfg, 50).unwrap().positions.len(), 3);
        assert_eq!(mask_tokens(&[10, 11], &cfg, 50).unwrap().positions.len(), 1);
        assert_eq!(mask_tokens(&ids, &cfg, 50).unwrap(), mask_tokens(&ids, &cfg, 50).unwrap());
    }

    #[test]
    fn specials_are_never_selected() {
        let cfg = MaskingConfig { mask_rate: 0.9, ..MaskingConfig::default() };
        let m = mask_tokens(&[12, EOS_ID, 13], &cfg, 20).unwrap();
        assert_eq!(m.positions, vec![0, 2]);
        assert_eq!(m.labels, vec![12, 13]);
        assert_eq!(m.ids[1], EOS_ID);
        assert!(matches!(mask_tokens(&[EOS_ID], &cfg, 20), Err(AdaptError::NothingToMask)));
    }

    #[test]
    fn scheme_must_sum_to_one() {
        let cfg = MaskingConfig { keep: 0.2, ..MaskingConfig::default() };
        assert!(mask_tokens(&[10], &cfg, 20).is_err());
        let cfg = MaskingConfig { mask_rate: 1.0, ..MaskingConfig::default() };
        assert!(mask_tokens(&[10], &cfg, 20).is_err());
    }

    #[test]
    fn all_mask_scheme_rewrites_every_selection() {
        let cfg = MaskingConfig { replace_with_mask: 1.0, random_token: 0.0, keep: 0.0, ..MaskingConfig::default() };
        let ids: Vec<u32> = (10..40).collect();
        let m = mask_tokens(&ids, &cfg, 50).unwrap();
        assert!(m.positions.iter().all(|&p| m.ids[p] == MASK_ID));
        assert_eq!(m.targets().iter().filter(|t| t.is_some()).count(), 5);
    }
}
