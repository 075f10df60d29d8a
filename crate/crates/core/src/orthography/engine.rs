use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::{documented_order, Position, VariationClass, VariationRule};

/// Iteration cap for normalization; only reachable with cyclic custom rule sets.
const MAX_REWRITES: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSet {
    pub base: String,
    /// Single-rule variants first, then two-rule compositions.
    pub variants: Vec<String>,
    /// Rule indices (into the rule set) that produced each variant, in application order.
    pub applied_rules: Vec<Vec<usize>>,
}

impl VariantSet {
    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn contains(&self, v: &str) -> bool {
        self.variants.iter().any(|x| x == v)
    }
}

pub(crate) fn canonical(token: &str) -> String {
    let lower: String = token.nfc().collect::<String>().to_lowercase();
    lower.nfc().collect()
}

pub(crate) fn match_positions(token: &str, pattern: &str, position: Position) -> Vec<usize> {
    if pattern.is_empty() || pattern.len() > token.len() {
        return Vec::new();
    }
    let (n, m) = (token.len(), pattern.len());
    token
        .char_indices()
        .map(|(i, _)| i)
        .filter(|&i| token[i..].starts_with(pattern))
        .filter(|&i| match position {
            Position::Initial => i == 0,
            Position::Final => i + m == n,
            Position::Medial => i > 0 && i + m < n,
            Position::Any => true,
            Position::Word => m == n,
        })
        .collect()
}

fn rewrite(token: &str, at: usize, pattern_len: usize, replacement: &str) -> String {
    let mut s = String::with_capacity(token.len() + replacement.len());
    s.push_str(&token[..at]);
    s.push_str(replacement);
    s.push_str(&token[at + pattern_len..]);
    s
}

/// Every result of applying `rule` once, one per matching position.
fn apply_once(token: &str, rule: &VariationRule) -> Vec<String> {
    rule.matches(token)
        .into_iter()
        .map(|i| rewrite(token, i, rule.pattern.len(), &rule.replacement))
        .filter(|v| !v.is_empty())
        .collect()
}

/// Spelling variants of `token` (lowercased). Single applications come first
/// in documented rule order, then two-rule compositions. When a group exceeds
/// the remaining budget a seeded subset is kept, still in enumeration order.
pub fn token_variants(token: &str, rules: &[VariationRule], max_variants: usize, seed: u64) -> VariantSet {
    let base = canonical(token);
    let order = documented_order(rules);
    let mut seen: HashSet<String> = HashSet::from([base.clone()]);

    let mut singles: Vec<(String, Vec<usize>)> = Vec::new();
    for &r in &order {
        for v in apply_once(&base, &rules[r]) {
            if seen.insert(v.clone()) {
                singles.push((v, vec![r]));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = take_budget(singles.clone(), max_variants, &mut rng);
    let remaining = max_variants.saturating_sub(chosen.len());
    if remaining > 0 {
        let mut pairs: Vec<(String, Vec<usize>)> = Vec::new();
        for (v, first) in &singles {
            for &r in &order {
                for w in apply_once(v, &rules[r]) {
                    if seen.insert(w.clone()) {
                        pairs.push((w, vec![first[0], r]));
                    }
                }
            }
        }
        chosen.extend(take_budget(pairs, remaining, &mut rng));
    }
    let (variants, applied_rules) = chosen.into_iter().unzip();
    VariantSet { base, variants, applied_rules }
}

fn take_budget<T>(items: Vec<T>, budget: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if items.len() <= budget {
        return items;
    }
    let mut keep = sample(rng, items.len(), budget).into_vec();
    keep.sort_unstable();
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    keep.into_iter().map(|i| slots[i].take().expect("index sampled once")).collect()
}

fn connects_once(a: &str, b: &str, rule: &VariationRule) -> bool {
    apply_once(a, rule).iter().any(|v| v == b)
}

/// Class and subtype of the rule linking `a` and `b` in either direction.
/// A single rule wins over a two-rule chain; within a chain the member that
/// comes first in documented order is reported.
pub fn classify_pair(a: &str, b: &str, rules: &[VariationRule]) -> Option<(VariationClass, String)> {
    let (a, b) = (canonical(a), canonical(b));
    if a == b {
        return None;
    }
    let order = documented_order(rules);
    let label = |r: usize| (rules[r].class, rules[r].subtype.clone());
    if let Some(&r) = order.iter().find(|&&r| connects_once(&a, &b, &rules[r]) || connects_once(&b, &a, &rules[r])) {
        return Some(label(r));
    }
    let rank: HashMap<usize, usize> = order.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let mut best: Option<usize> = None;
    for (from, to) in [(&a, &b), (&b, &a)] {
        for &r1 in &order {
            for mid in apply_once(from, &rules[r1]) {
                for &r2 in &order {
                    if connects_once(&mid, to, &rules[r2]) {
                        let first = if rank[&r1] <= rank[&r2] { r1 } else { r2 };
                        if best.is_none_or(|b| rank[&first] < rank[&b]) {
                            best = Some(first);
                        }
                    }
                }
            }
        }
    }
    best.map(label)
}

/// Canonical (English-like) spelling of `token`.
///
/// Word exceptions are looked up in both directions first. Otherwise the
/// inverses of alternation and transcription rules are applied one rewrite at
/// a time (leftmost match of the first applicable rule in documented order)
/// until none applies. Conversions and deletions lose information and are not
/// inverted.
pub fn normalize_token(token: &str, rules: &[VariationRule]) -> String {
    let t = canonical(token);
    let order = documented_order(rules);
    let mut word_inverse: HashMap<&str, &str> = HashMap::new();
    let mut protected: HashSet<&str> = HashSet::new();
    for &r in &order {
        let rule = &rules[r];
        if rule.position == Position::Word {
            protected.insert(rule.pattern.as_str());
            word_inverse.entry(rule.replacement.as_str()).or_insert(rule.pattern.as_str());
        }
    }
    if protected.contains(t.as_str()) {
        return t;
    }
    if let Some(base) = word_inverse.get(t.as_str()) {
        return base.to_string();
    }
    let inverses: Vec<&VariationRule> = order
        .iter()
        .map(|&r| &rules[r])
        .filter(|r| {
            matches!(r.class, VariationClass::Alternation | VariationClass::Transcription)
                && r.position != Position::Word
                && !r.replacement.is_empty()
        })
        .collect();
    let mut cur = t;
    for _ in 0..MAX_REWRITES {
        let step = inverses.iter().find_map(|r| {
            match_positions(&cur, &r.replacement, r.position)
                .first()
                .map(|&i| rewrite(&cur, i, r.replacement.len(), &r.pattern))
        });
        match step {
            Some(next) => cur = next,
            None => break,
        }
    }
    match word_inverse.get(cur.as_str()) {
        Some(base) => base.to_string(),
        None => cur,
    }
}

#[cfg(test)]
mod tests {
    use super::super::builtin_rules;
    use super::*;

    #[test]
    fn positions() {
        assert_eq!(match_positions("hehe", "h", Position::Initial), [0]);
        assert_eq!(match_positions("hehe", "h", Position::Medial), [2]);
        assert_eq!(match_positions("hehe", "e", Position::Final), [3]);
        assert_eq!(match_positions("aaa", "aa", Position::Any), [0, 1]);
        assert_eq!(match_positions("our", "our", Position::Word), [0]);
        assert!(match_positions("ours", "our", Position::Word).is_empty());
    }

    #[test]
    fn table_pairs_are_generated() {
        let rules = builtin_rules();
        for (base, variant) in [
            ("carry", "karry"),
            ("call", "coll"),
            ("our", "awa"),
            ("your", "yor"),
            ("trouble", "trobol"),
            ("whether", "weda"),
            ("he", "e"),
            ("different", "difren"),
        ] {
            let vs = token_variants(base, &rules, 64, 0);
            assert!(vs.contains(variant), "{base} -> {vs:?}");
            assert!(!vs.contains(base));
        }
    }

    #[test]
    fn no_rule_no_variants() {
        assert!(token_variants("xyz", &builtin_rules(), 8, 0).is_empty());
    }

    #[test]
    fn budget_and_seed() {
        let rules = builtin_rules();
        let full = token_variants("abacadae", &rules, 1000, 0);
        assert!(full.variants.len() > 6);
        let a = token_variants("abacadae", &rules, 5, 9);
        let b = token_variants("abacadae", &rules, 5, 9);
        assert_eq!(a, b);
        assert_eq!(a.variants.len(), 5);
        assert!(a.variants.iter().all(|v| full.contains(v)));
    }

    #[test]
    fn applied_rules_reproduce_variant() {
        let rules = builtin_rules();
        let vs = token_variants("trouble", &rules, 64, 0);
        let i = vs.variants.iter().position(|v| v == "trobol").unwrap();
        let mut frontier = vec![vs.base.clone()];
        for &r in &vs.applied_rules[i] {
            frontier = frontier.iter().flat_map(|t| apply_once(t, &rules[r])).collect();
        }
        assert!(frontier.iter().any(|v| v == "trobol"));
    }

    #[test]
    fn classify_examples() {
        let rules = builtin_rules();
        let c = |a: &str, b: &str| classify_pair(a, b, &rules).map(|(c, s)| (c.as_str(), s));
        assert_eq!(c("trouble", "trobol"), Some(("transcription", "bl/bol".into())));
        assert_eq!(c("your", "yor"), Some(("conversion", "ou/o".into())));
        assert_eq!(c("karry", "carry"), Some(("alternation", "c/k".into())));
        assert_eq!(c("cat", "cat"), None);
        assert_eq!(c("cat", "dog"), None);
    }

    #[test]
    fn normalize_examples() {
        let rules = builtin_rules();
        assert_eq!(normalize_token("karry", &rules), "carry");
        assert_eq!(normalize_token("carry", &rules), "carry");
        assert_eq!(normalize_token("Coll", &rules), "call");
        assert_eq!(normalize_token("difren", &rules), "different");
        assert_eq!(normalize_token("awa", &rules), "our");
        assert_eq!(normalize_token("whether", &rules), "whether");
        // without the exception entry deletions are not undone
        let no_words: Vec<_> = rules.iter().filter(|r| r.position != Position::Word).cloned().collect();
        assert_eq!(normalize_token("difren", &no_words), "difren");
    }
}
