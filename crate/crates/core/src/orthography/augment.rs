use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::token_variants;
use super::{OrthographyError, VariationRule};
use crate::corpus::{LanguageTag, MonoCorpus, ParallelCorpus};

pub const AUGMENT_SUFFIX: &str = "+ortho";
const REPLACE_PROB: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Probability that a sentence receives an augmented copy.
    pub rate: f64,
    pub seed: u64,
    /// Variant budget per token.
    pub max_variants: usize,
    /// Side of a parallel corpus to rewrite.
    pub lang: LanguageTag,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { rate: 0.1, seed: 0, max_variants: 8, lang: LanguageTag::pcm() }
    }
}

impl AugmentConfig {
    fn validate(&self) -> Result<(), OrthographyError> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(OrthographyError::BadRate(self.rate));
        }
        if self.max_variants == 0 {
            return Err(OrthographyError::NoVariantBudget);
        }
        Ok(())
    }
}

/// Token split into leading punctuation, word core and trailing punctuation.
fn split_core(tok: &str) -> (&str, &str, &str) {
    let start = tok.find(|c: char| c.is_alphanumeric()).unwrap_or(tok.len());
    let end = tok.rfind(|c: char| c.is_alphanumeric()).map_or(start, |i| i + tok[i..].chars().next().unwrap().len_utf8());
    (&tok[..start], &tok[start..end], &tok[end..])
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Augmenter<'r> {
    rules: &'r [VariationRule],
    cfg: &'r AugmentConfig,
    rng: ChaCha8Rng,
    cache: HashMap<String, Vec<String>>,
}

impl<'r> Augmenter<'r> {
    fn new(rules: &'r [VariationRule], cfg: &'r AugmentConfig) -> Self {
        Augmenter { rules, cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), cache: HashMap::new() }
    }

    fn variants(&mut self, core: &str) -> &[String] {
        let (rules, budget, seed) = (self.rules, self.cfg.max_variants, self.cfg.seed);
        self.cache.entry(core.to_string()).or_insert_with(|| token_variants(core, rules, budget, seed).variants)
    }

    /// Decides selection for one sentence and, if selected, returns the copy.
    /// Only lowercase words are rewritten, plus a capitalized sentence-initial
    /// word whose capital is restored afterwards. A selected sentence whose
    /// coin flips changed nothing gets its first eligible token replaced; a
    /// sentence with no eligible token yields no copy.
    fn sentence(&mut self, text: &str) -> Option<String> {
        if !self.rng.gen_bool(self.cfg.rate) {
            return None;
        }
        let toks: Vec<&str> = text.split_whitespace().collect();
        let mut out: Vec<String> = toks.iter().map(|t| t.to_string()).collect();
        let mut eligible: Vec<(usize, Vec<String>, bool)> = Vec::new();
        for (i, tok) in toks.iter().enumerate() {
            let (_, core, _) = split_core(tok);
            if core.is_empty() {
                continue;
            }
            let lower = core.to_lowercase();
            let initial_cap = i == 0 && core == capitalize(&lower);
            if core != lower && !initial_cap {
                continue;
            }
            let vs = self.variants(&lower).to_vec();
            if !vs.is_empty() {
                eligible.push((i, vs, initial_cap));
            }
        }
        if eligible.is_empty() {
            return None;
        }
        let mut changed = false;
        for (i, vs, cap) in &eligible {
            if self.rng.gen_bool(REPLACE_PROB) {
                out[*i] = self.replace(toks[*i], vs, *cap);
                changed = true;
            }
        }
        if !changed {
            let (i, vs, cap) = &eligible[0];
            out[*i] = self.replace(toks[*i], vs, *cap);
        }
        Some(out.join(" "))
    }

    fn replace(&mut self, tok: &str, vs: &[String], cap: bool) -> String {
        let (pre, _, post) = split_core(tok);
        let v = &vs[self.rng.gen_range(0..vs.len())];
        let v = if cap { capitalize(v) } else { v.clone() };
        format!("{pre}{v}{post}")
    }
}

/// Originals followed by augmented copies of selected pairs. Only the
/// `cfg.lang` side is rewritten; pairs without that side are left alone.
pub fn augment_parallel(
    corpus: &ParallelCorpus,
    rules: &[VariationRule],
    cfg: &AugmentConfig,
) -> Result<ParallelCorpus, OrthographyError> {
    cfg.validate()?;
    let mut aug = Augmenter::new(rules, cfg);
    let mut out = corpus.clone();
    for p in &corpus.pairs {
        let Some(text) = p.side(&cfg.lang) else { continue };
        if let Some(new) = aug.sentence(text) {
            let mut q = p.clone();
            *q.side_mut(&cfg.lang).expect("side exists") = new;
            q.source_name = format!("{}{AUGMENT_SUFFIX}", p.source_name);
            out.pairs.push(q);
        }
    }
    Ok(out)
}

pub fn augment_mono(corpus: &MonoCorpus, rules: &[VariationRule], cfg: &AugmentConfig) -> Result<MonoCorpus, OrthographyError> {
    cfg.validate()?;
    let mut aug = Augmenter::new(rules, cfg);
    let mut out = corpus.clone();
    out.name = format!("{}{AUGMENT_SUFFIX}", corpus.name);
    for s in &corpus.sentences {
        if let Some(new) = aug.sentence(s) {
            out.sentences.push(new);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::builtin_rules;
    use super::*;
    use crate::corpus::SentencePair;

    fn one_pair(pcm: &str) -> ParallelCorpus {
        let mut c = ParallelCorpus::new("toy", (LanguageTag::eng(), LanguageTag::pcm()));
        c.pairs.push(SentencePair::real("carry it", pcm, &c.langs, "toy"));
        c
    }

    #[test]
    fn rate_zero_is_identity() {
        let c = one_pair("carry am");
        let cfg = AugmentConfig { rate: 0.0, ..Default::default() };
        assert_eq!(augment_parallel(&c, &builtin_rules(), &cfg).unwrap(), c);
    }

    #[test]
    fn rate_one_adds_a_changed_copy() {
        let rules = builtin_rules();
        for seed in 0..20 {
            let cfg = AugmentConfig { rate: 1.0, seed, ..Default::default() };
            let out = augment_parallel(&one_pair("carry am"), &rules, &cfg).unwrap();
            assert_eq!(out.len(), 2);
            let copy = &out.pairs[1];
            assert_eq!(copy.src, "carry it");
            assert_eq!(copy.source_name, "toy+ortho");
            assert_ne!(copy.tgt, "carry am");
            assert_eq!(out, augment_parallel(&one_pair("carry am"), &rules, &cfg).unwrap());
        }
    }

    #[test]
    fn no_eligible_token_no_copy() {
        let cfg = AugmentConfig { rate: 1.0, ..Default::default() };
        let out = augment_parallel(&one_pair("xyz zzz"), &builtin_rules(), &cfg).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn punctuation_and_initial_capital_kept() {
        let cfg = AugmentConfig { rate: 1.0, max_variants: 1, ..Default::default() };
        let out = augment_parallel(&one_pair("Carry, Lagos."), &builtin_rules(), &cfg).unwrap();
        let copy = &out.pairs[1].tgt;
        assert!(copy.starts_with('K') || copy.starts_with('C'), "{copy}");
        assert!(copy.ends_with(", Lagos."), "{copy}");
        assert_ne!(copy, "Carry, Lagos.");
    }

    #[test]
    fn bad_rate_rejected() {
        let cfg = AugmentConfig { rate: 1.5, ..Default::default() };
        assert!(augment_parallel(&one_pair("x"), &builtin_rules(), &cfg).is_err());
    }

    #[test]
    fn mono_copies_appended() {
        let m = MonoCorpus::new("m", LanguageTag::pcm(), vec!["carry am".into(), "xyz".into()]);
        let cfg = AugmentConfig { rate: 1.0, ..Default::default() };
        let out = augment_mono(&m, &builtin_rules(), &cfg).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(&out.sentences[..2], &m.sentences[..]);
    }
}
