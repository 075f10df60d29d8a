//! Rewrite rules for systematic spelling variation in Pidgin text.
//!
//! Rules come in two kinds: grapheme rules, which rewrite one occurrence of a
//! pattern at an initial, medial, final or arbitrary position, and whole-word
//! exceptions (`Position::Word`) for composite pairs such as `our -> awa`.
//!
//! Everything here works on lowercase NFC text. Where an operation has to pick
//! between rules it uses the *documented order*: word exceptions first, then
//! grapheme rules; within each group by descending pattern length, then
//! rule-set order.

mod augment;
mod engine;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment_mono, augment_parallel, AugmentConfig, AUGMENT_SUFFIX};
pub use engine::{classify_pair, normalize_token, token_variants, VariantSet};

#[derive(Debug, Error)]
pub enum OrthographyError {
    #[error("rule {index}: {message}")]
    InvalidRule { index: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("augmentation rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("max_variants must be at least 1")]
    NoVariantBudget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariationClass {
    Alternation,
    Conversion,
    Transcription,
    Deletion,
}

impl VariationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VariationClass::Alternation => "alternation",
            VariationClass::Conversion => "conversion",
            VariationClass::Transcription => "transcription",
            VariationClass::Deletion => "deletion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    /// Match must start the token.
    Initial,
    /// Match must neither start nor end the token.
    Medial,
    /// Match must end the token.
    Final,
    Any,
    /// Pattern is the entire token.
    Word,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationRule {
    pub class: VariationClass,
    pub subtype: String,
    pub pattern: String,
    pub replacement: String,
    pub position: Position,
}

impl VariationRule {
    pub fn new(class: VariationClass, subtype: &str, pattern: &str, replacement: &str, position: Position) -> Self {
        VariationRule {
            class,
            subtype: subtype.into(),
            pattern: pattern.into(),
            replacement: replacement.into(),
            position,
        }
    }

    /// Byte offsets where `pattern` occurs in `token` at an allowed position.
    pub fn matches(&self, token: &str) -> Vec<usize> {
        engine::match_positions(token, &self.pattern, self.position)
    }
}

/// The eight variation types plus three whole-word exceptions.
pub fn builtin_rules() -> Vec<VariationRule> {
    use Position::*;
    use VariationClass::*;
    vec![
        VariationRule::new(Alternation, "c/k", "c", "k", Any),
        VariationRule::new(Alternation, "a/o", "a", "o", Any),
        VariationRule::new(Conversion, "ou/a", "ou", "a", Any),
        VariationRule::new(Conversion, "ou/o", "ou", "o", Any),
        VariationRule::new(Transcription, "bl/bol", "ble", "bol", Final),
        VariationRule::new(Transcription, "er/a", "er", "a", Final),
        VariationRule::new(Deletion, "initial-h", "h", "", Initial),
        VariationRule::new(Deletion, "medial-vowel", "e", "", Medial),
        VariationRule::new(Conversion, "ou/a", "our", "awa", Word),
        VariationRule::new(Transcription, "er/a", "whether", "weda", Word),
        VariationRule::new(Deletion, "medial-vowel", "different", "difren", Word),
    ]
}

/// Checks the rule-set invariants: non-empty patterns, empty replacements
/// exactly for deletions, unique `(pattern, replacement, position)`.
pub fn validate_rules(rules: &[VariationRule]) -> Result<(), OrthographyError> {
    let mut seen = HashSet::new();
    for (index, r) in rules.iter().enumerate() {
        let bad = |message: &str| Err(OrthographyError::InvalidRule { index, message: message.into() });
        if r.pattern.is_empty() {
            return bad("empty pattern");
        }
        if r.pattern != r.pattern.to_lowercase() || r.replacement != r.replacement.to_lowercase() {
            return bad("rules must be lowercase");
        }
        if r.class == VariationClass::Deletion && r.position != Position::Word && !r.replacement.is_empty() {
            return bad("deletion rule with non-empty replacement");
        }
        if r.class != VariationClass::Deletion && r.replacement.is_empty() {
            return bad("empty replacement outside the deletion class");
        }
        if r.pattern == r.replacement {
            return bad("replacement equals pattern");
        }
        if !seen.insert((&r.pattern, &r.replacement, r.position)) {
            return bad("duplicate (pattern, replacement, position)");
        }
    }
    Ok(())
}

/// Rule indices in documented order.
pub fn documented_order(rules: &[VariationRule]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rules.len()).collect();
    idx.sort_by_key(|&i| (rules[i].position != Position::Word, std::cmp::Reverse(rules[i].pattern.chars().count()), i));
    idx
}

/// One JSON rule per line.
pub fn read_rules(path: &Path) -> Result<Vec<VariationRule>, OrthographyError> {
    let text = fs::read_to_string(path).map_err(|source| OrthographyError::Io { path: path.into(), source })?;
    let mut rules = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: VariationRule = serde_json::from_str(line)
            .map_err(|e| OrthographyError::InvalidRule { index: rules.len(), message: e.to_string() })?;
        rules.push(r);
    }
    validate_rules(&rules)?;
    Ok(rules)
}

pub fn write_rules(rules: &[VariationRule], path: &Path) -> Result<(), OrthographyError> {
    let mut out = String::new();
    for r in rules {
        out.push_str(&serde_json::to_string(r).expect("rule serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| OrthographyError::Io { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rules_are_valid() {
        validate_rules(&builtin_rules()).unwrap();
        let classes: HashSet<_> = builtin_rules().iter().map(|r| r.class).collect();
        assert_eq!(classes.len(), 4);
    }

    #[test]
    fn documented_order_puts_words_then_longer_patterns_first() {
        let rules = builtin_rules();
        let order: Vec<&str> = documented_order(&rules).iter().map(|&i| rules[i].pattern.as_str()).collect();
        assert_eq!(order, ["different", "whether", "our", "ble", "ou", "ou", "er", "c", "a", "h", "e"]);
    }

    #[test]
    fn invalid_rules_rejected() {
        let mut rules = builtin_rules();
        rules.push(rules[0].clone());
        assert!(validate_rules(&rules).is_err());
        let del = VariationRule::new(VariationClass::Deletion, "x", "h", "k", Position::Initial);
        assert!(validate_rules(&[del]).is_err());
        let empty = VariationRule::new(VariationClass::Alternation, "x", "", "k", Position::Any);
        assert!(validate_rules(&[empty]).is_err());
    }

    #[test]
    fn rule_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rules.jsonl");
        write_rules(&builtin_rules(), &p).unwrap();
        assert_eq!(read_rules(&p).unwrap(), builtin_rules());
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(r#"{"class":"alternation","subtype":"c/k","pattern":"c","replacement":"k","position":"any"}"#));
    }
}
