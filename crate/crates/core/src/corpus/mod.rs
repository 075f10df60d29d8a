//! Parallel and monolingual corpora: ingestion, key alignment, cleaning,
//! deduplication, merging and seeded splitting.

mod io;
mod labeled;
mod ops;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use io::{
    ingest_monolingual, ingest_parallel, read_keyed_segments, write_line_aligned, write_monolingual, write_parallel_jsonl,
    ParallelFormat,
};
pub use labeled::{ingest_labeled, write_labeled, LabeledCorpus, LabeledText, Sentiment, NUM_LABELS};
pub use ops::{
    align_by_key, clean_and_filter, deduplicate, merge, normalize_text, split_and_subsample, AlignOutcome, CleanConfig, CleanReport,
    Splits,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line-aligned files disagree: {src_lines} vs {tgt_lines} lines (first unmatched line {line})")]
    Alignment { line: usize, src_lines: usize, tgt_lines: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate key {key:?} in {document} document")]
    DuplicateKey { key: String, document: &'static str },
    #[error("language pair mismatch: {0}")]
    LanguageMismatch(String),
    #[error("invalid language tag {0:?}")]
    InvalidLanguage(String),
    #[error("split fractions must each lie in [0, 1] and sum to 1, got {0:?}")]
    InvalidSplit([f64; 3]),
    #[error("subsample fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("{0} split would be empty")]
    EmptySplit(&'static str),
}

/// Lowercase language code such as `eng` or `pcm`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: &str) -> Result<Self, CorpusError> {
        if code.is_empty() || !code.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(CorpusError::InvalidLanguage(code.to_string()));
        }
        Ok(LanguageTag(code.to_string()))
    }

    pub fn eng() -> Self {
        LanguageTag("eng".into())
    }

    pub fn pcm() -> Self {
        LanguageTag("pcm".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The `<2xxx>` source token that asks for output in this language.
    pub fn direction_token(&self) -> String {
        format!("<2{}>", self.0)
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        LanguageTag::new(&s)
    }
}

impl From<LanguageTag> for String {
    fn from(t: LanguageTag) -> String {
        t.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Languages the toolkit accepts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LanguageRegistry {
    codes: BTreeSet<LanguageTag>,
}

impl Default for LanguageRegistry {
    fn default() -> Self {
        LanguageRegistry { codes: [LanguageTag::eng(), LanguageTag::pcm()].into_iter().collect() }
    }
}

impl LanguageRegistry {
    pub fn contains(&self, tag: &LanguageTag) -> bool {
        self.codes.contains(tag)
    }

    /// Parses `code` and checks membership.
    pub fn tag(&self, code: &str) -> Result<LanguageTag, CorpusError> {
        let t = LanguageTag::new(code)?;
        if self.contains(&t) {
            Ok(t)
        } else {
            Err(CorpusError::InvalidLanguage(code.to_string()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// One aligned sentence pair. For back-translated pairs `tgt` is the
/// model-generated side.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentencePair {
    pub src: String,
    pub tgt: String,
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    pub origin: Origin,
    pub source_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl SentencePair {
    pub fn real(src: &str, tgt: &str, langs: &(LanguageTag, LanguageTag), source_name: &str) -> Self {
        SentencePair {
            src: nfc(src),
            tgt: nfc(tgt),
            src_lang: langs.0.clone(),
            tgt_lang: langs.1.clone(),
            origin: Origin::Real,
            source_name: source_name.to_string(),
            key: None,
        }
    }

    /// Text on the `lang` side, if the pair has one.
    pub fn side(&self, lang: &LanguageTag) -> Option<&str> {
        if &self.src_lang == lang {
            Some(&self.src)
        } else if &self.tgt_lang == lang {
            Some(&self.tgt)
        } else {
            None
        }
    }

    pub fn side_mut(&mut self, lang: &LanguageTag) -> Option<&mut String> {
        if &self.src_lang == lang {
            Some(&mut self.src)
        } else if &self.tgt_lang == lang {
            Some(&mut self.tgt)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub name: String,
    pub langs: (LanguageTag, LanguageTag),
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(name: impl Into<String>, langs: (LanguageTag, LanguageTag)) -> Self {
        ParallelCorpus { name: name.into(), langs, pairs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Whether `pair` runs between this corpus' languages, in either direction.
    pub fn accepts(&self, pair: &SentencePair) -> bool {
        let (a, b) = &self.langs;
        (&pair.src_lang == a && &pair.tgt_lang == b) || (&pair.src_lang == b && &pair.tgt_lang == a)
    }

    pub fn same_language_pair(&self, other: &ParallelCorpus) -> bool {
        let (a, b) = &self.langs;
        let (c, d) = &other.langs;
        (a == c && b == d) || (a == d && b == c)
    }

    pub fn synthetic_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.origin == Origin::Synthetic).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonoCorpus {
    pub name: String,
    pub lang: LanguageTag,
    pub sentences: Vec<String>,
}

impl MonoCorpus {
    pub fn new(name: impl Into<String>, lang: LanguageTag, sentences: Vec<String>) -> Self {
        MonoCorpus { name: name.into(), lang, sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Train/dev/test proportions and the shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub dev_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.8, dev_frac: 0.1, test_frac: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let f = [self.train_frac, self.dev_frac, self.test_frac];
        let in_range = f.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(f));
        }
        Ok(())
    }
}

pub(crate) fn nfc(s: &str) -> String {
    s.nfc().collect()
}
