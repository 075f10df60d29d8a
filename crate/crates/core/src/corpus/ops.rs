use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nfc, CorpusError, LanguageTag, Origin, ParallelCorpus, SentencePair, SplitSpec};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignOutcome {
    pub corpus: ParallelCorpus,
    /// Keys present on only one side: source-only keys in source order, then
    /// target-only keys in target order.
    pub skipped: Vec<String>,
}

fn key_index<'a>(doc: &'a [(String, String)], which: &'static str) -> Result<HashMap<&'a str, &'a str>, CorpusError> {
    let mut m = HashMap::with_capacity(doc.len());
    for (k, t) in doc {
        if m.insert(k.as_str(), t.as_str()).is_some() {
            return Err(CorpusError::DuplicateKey { key: k.clone(), document: which });
        }
    }
    Ok(m)
}

/// Pairs segments sharing a key exactly, in source key order.
pub fn align_by_key(
    src_doc: &[(String, String)],
    tgt_doc: &[(String, String)],
    langs: (LanguageTag, LanguageTag),
    source_name: &str,
) -> Result<AlignOutcome, CorpusError> {
    let src = key_index(src_doc, "source")?;
    let tgt = key_index(tgt_doc, "target")?;
    let mut corpus = ParallelCorpus::new(source_name, langs);
    let mut skipped = Vec::new();
    for (k, s) in src_doc {
        match tgt.get(k.as_str()) {
            Some(t) => {
                let mut p = SentencePair::real(s, t, &corpus.langs, source_name);
                p.key = Some(k.clone());
                corpus.pairs.push(p);
            }
            None => skipped.push(k.clone()),
        }
    }
    skipped.extend(tgt_doc.iter().filter(|(k, _)| !src.contains_key(k.as_str())).map(|(k, _)| k.clone()));
    Ok(AlignOutcome { corpus, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanConfig {
    /// Maximum whitespace tokens per side.
    pub max_len: usize,
    /// Maximum ratio between the longer and the shorter side, in tokens.
    pub max_ratio: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig { max_len: 200, max_ratio: 9.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_length: usize,
    pub dropped_ratio: usize,
}

impl CleanReport {
    pub fn dropped(&self) -> usize {
        self.dropped_empty + self.dropped_length + self.dropped_ratio
    }
}

/// NFC, control characters removed, whitespace runs collapsed and trimmed.
pub fn normalize_text(s: &str) -> String {
    let cleaned: String = nfc(s)
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn clean_and_filter(corpus: &ParallelCorpus, cfg: &CleanConfig) -> (ParallelCorpus, CleanReport) {
    let max_len = cfg.max_len.max(1);
    let max_ratio = cfg.max_ratio.max(1.0);
    let mut out = ParallelCorpus::new(corpus.name.clone(), corpus.langs.clone());
    let mut report = CleanReport::default();
    for p in &corpus.pairs {
        let src = normalize_text(&p.src);
        let tgt = normalize_text(&p.tgt);
        let (a, b) = (src.split(' ').filter(|t| !t.is_empty()).count(), tgt.split(' ').filter(|t| !t.is_empty()).count());
        if a == 0 || b == 0 {
            report.dropped_empty += 1;
        } else if a > max_len || b > max_len {
            report.dropped_length += 1;
        } else if a.max(b) as f64 / a.min(b) as f64 > max_ratio {
            report.dropped_ratio += 1;
        } else {
            out.pairs.push(SentencePair { src, tgt, ..p.clone() });
        }
    }
    report.kept = out.len();
    (out, report)
}

/// Keeps the first occurrence of each exact `(src, tgt)`.
pub fn deduplicate(corpus: &ParallelCorpus) -> ParallelCorpus {
    let mut seen = HashSet::new();
    let pairs = corpus
        .pairs
        .iter()
        .filter(|p| seen.insert((p.src.as_str(), p.tgt.as_str())))
        .cloned()
        .collect();
    ParallelCorpus { name: corpus.name.clone(), langs: corpus.langs.clone(), pairs }
}

/// Concatenates in argument order, then deduplicates.
pub fn merge(corpora: &[&ParallelCorpus]) -> Result<ParallelCorpus, CorpusError> {
    let first = corpora.first().ok_or_else(|| CorpusError::LanguageMismatch("nothing to merge".into()))?;
    let mut all = ParallelCorpus::new(
        corpora.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("+"),
        first.langs.clone(),
    );
    for c in corpora {
        if !c.same_language_pair(first) {
            return Err(CorpusError::LanguageMismatch(format!(
                "{} is {}/{}, {} is {}/{}",
                c.name, c.langs.0, c.langs.1, first.name, first.langs.0, first.langs.1
            )));
        }
        all.pairs.extend(c.pairs.iter().cloned());
    }
    Ok(deduplicate(&all))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Seeded shuffle of the real pairs, split by the spec fractions; train is
/// then cut to its first `floor(fraction * |train|)` pairs. Dev and test take
/// `floor(frac * n)` pairs each and train the remainder. Synthetic pairs never
/// enter dev or test: they are appended, in input order, to train.
pub fn split_and_subsample(corpus: &ParallelCorpus, spec: &SplitSpec, fraction: f64) -> Result<Splits, CorpusError> {
    spec.validate()?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let real: Vec<&SentencePair> = corpus.pairs.iter().filter(|p| p.origin == Origin::Real).collect();
    let n = real.len();
    let n_dev = (spec.dev_frac * n as f64 + 1e-9).floor() as usize;
    let n_test = (spec.test_frac * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_dev - n_test;
    for (name, frac, count) in [("train", spec.train_frac, n_train), ("dev", spec.dev_frac, n_dev), ("test", spec.test_frac, n_test)] {
        if frac > 0.0 && count == 0 {
            return Err(CorpusError::EmptySplit(name));
        }
    }
    let n_sub = (fraction * n_train as f64 + 1e-9).floor() as usize;
    if spec.train_frac > 0.0 && n_sub == 0 {
        return Err(CorpusError::EmptySplit("train"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let part = |name: &str, idx: &[usize]| ParallelCorpus {
        name: format!("{}.{name}", corpus.name),
        langs: corpus.langs.clone(),
        pairs: idx.iter().map(|&i| real[i].clone()).collect(),
    };
    let mut train = part("train", &order[..n_sub]);
    train.pairs.extend(corpus.pairs.iter().filter(|p| p.origin == Origin::Synthetic).cloned());
    Ok(Splits {
        train,
        dev: part("dev", &order[n_train..n_train + n_dev]),
        test: part("test", &order[n_train + n_dev..]),
    })
}
