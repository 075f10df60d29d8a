use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nfc, CorpusError, LanguageTag};

pub const NUM_LABELS: usize = 3;

/// Sentiment classes; the index is the classifier output position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
    Neutral,
}

impl Sentiment {
    pub const ALL: [Sentiment; NUM_LABELS] = [Sentiment::Positive, Sentiment::Negative, Sentiment::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledText {
    pub text: String,
    pub label: Sentiment,
}

/// Sentences with sentiment labels, e.g. one split of a classification set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub name: String,
    pub lang: LanguageTag,
    pub items: Vec<LabeledText>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// First `floor(fraction * n)` items of a seeded shuffle; nested across fractions.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<LabeledCorpus, CorpusError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CorpusError::InvalidFraction(fraction));
        }
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = (fraction * self.items.len() as f64 + 1e-9).floor() as usize;
        if n == 0 {
            return Err(CorpusError::EmptySplit("train"));
        }
        let items = order[..n].iter().map(|&i| self.items[i].clone()).collect();
        Ok(LabeledCorpus { name: self.name.clone(), lang: self.lang.clone(), items })
    }
}

/// JSONL records `{"text", "label"}`.
pub fn ingest_labeled(path: &Path, lang: LanguageTag) -> Result<LabeledCorpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut item: LabeledText =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
        item.text = nfc(&item.text);
        items.push(item);
    }
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("labeled").to_string();
    Ok(LabeledCorpus { name, lang, items })
}

pub fn write_labeled(corpus: &LabeledCorpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for item in &corpus.items {
        out.push_str(&serde_json::to_string(item).expect("item serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CorpusError::Io { path: path.into(), source })
}
