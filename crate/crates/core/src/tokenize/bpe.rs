//! Greedy byte-pair encoding over characters with an end-of-word symbol.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::vocab::{Vocabulary, NUM_SPECIALS};
use super::TokenizeError;

pub const END_OF_WORD: &str = "</w>";

/// Merge rank lookup: `ranks[left][right]`.
pub(crate) type Ranks = HashMap<String, HashMap<String, usize>>;

/// Learned merges in learning order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self, TokenizeError> {
        let mut seen = HashSet::new();
        for (i, m) in merges.iter().enumerate() {
            if !seen.insert(m.clone()) {
                return Err(TokenizeError::Format(format!("duplicate merge {} {} at line {}", m.0, m.1, i + 1)));
            }
        }
        Ok(MergeTable { merges })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// One `left right` pair per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizeError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push((l.to_string(), r.to_string())),
                _ => return Err(TokenizeError::Format(format!("merge line {} is not `left right`: {line:?}", i + 1))),
            }
        }
        Self::new(merges)
    }

    pub(crate) fn ranks(&self) -> Ranks {
        let mut r: Ranks = HashMap::new();
        for (i, (a, b)) in self.merges.iter().enumerate() {
            r.entry(a.clone()).or_default().insert(b.clone(), i);
        }
        r
    }
}

enum Stop {
    Merges(usize),
    VocabSize(usize),
}

/// Learns up to `num_merges` merges. Stops early when no adjacent pair occurs twice.
pub fn train_bpe<'a, I>(texts: I, num_merges: usize) -> Result<(MergeTable, Vocabulary), TokenizeError>
where
    I: IntoIterator<Item = &'a str>,
{
    train(texts, Stop::Merges(num_merges))
}

/// Learns merges until the vocabulary (specials included) reaches `vocab_size`.
pub fn train_bpe_to_size<'a, I>(texts: I, vocab_size: usize) -> Result<(MergeTable, Vocabulary), TokenizeError>
where
    I: IntoIterator<Item = &'a str>,
{
    if vocab_size <= NUM_SPECIALS {
        return Err(TokenizeError::InvalidSize { size: vocab_size, specials: NUM_SPECIALS });
    }
    train(texts, Stop::VocabSize(vocab_size))
}

type Pair = (u32, u32);

struct Trainer {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, i64)>,
    pair_counts: HashMap<Pair, i64>,
    pair_words: HashMap<Pair, HashSet<usize>>,
}

impl Trainer {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_string());
        self.symbol_ids.insert(s.to_string(), id);
        id
    }

    fn count_word(&mut self, w: usize, sign: i64) {
        let (syms, count) = &self.words[w];
        let count = *count;
        for win in syms.windows(2) {
            let p = (win[0], win[1]);
            *self.pair_counts.entry(p).or_default() += sign * count;
            if sign > 0 {
                self.pair_words.entry(p).or_default().insert(w);
            }
        }
    }

    fn best_pair(&self) -> Option<(Pair, i64)> {
        let mut best: Option<(Pair, i64, String)> = None;
        for (&p, &c) in &self.pair_counts {
            if c < 2 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bp, bc, bcat)) => {
                    if c != *bc {
                        c > *bc
                    } else {
                        let cat = self.concat(p);
                        match cat.cmp(bcat) {
                            std::cmp::Ordering::Less => true,
                            std::cmp::Ordering::Greater => false,
                            std::cmp::Ordering::Equal => self.symbols[p.0 as usize] < self.symbols[bp.0 as usize],
                        }
                    }
                }
            };
            if better {
                best = Some((p, c, self.concat(p)));
            }
        }
        best.map(|(p, c, _)| (p, c))
    }

    fn concat(&self, p: Pair) -> String {
        let mut s = self.symbols[p.0 as usize].clone();
        s.push_str(&self.symbols[p.1 as usize]);
        s
    }

    fn apply(&mut self, p: Pair, merged: u32) {
        let mut affected: Vec<usize> = self.pair_words.remove(&p).map(|s| s.into_iter().collect()).unwrap_or_default();
        affected.sort_unstable();
        for w in affected {
            self.count_word(w, -1);
            let syms = &self.words[w].0;
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == p.0 && syms[i + 1] == p.1 {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            self.words[w].0 = out;
            self.count_word(w, 1);
        }
        self.pair_counts.retain(|_, c| *c > 0);
    }
}

fn train<'a, I>(texts: I, stop: Stop) -> Result<(MergeTable, Vocabulary), TokenizeError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in texts {
        for w in t.split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizeError::EmptyCorpus);
    }

    let mut tr = Trainer {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::new(),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
    };
    let mut alphabet: Vec<String> = word_counts
        .keys()
        .flat_map(|w| w.chars().map(String::from))
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    alphabet.sort();
    for s in &alphabet {
        tr.intern(s);
    }
    for (w, c) in &word_counts {
        let mut syms: Vec<u32> = w.chars().map(|ch| tr.symbol_ids[&ch.to_string()]).collect();
        syms.push(tr.symbol_ids[END_OF_WORD]);
        tr.words.push((syms, *c));
    }
    for w in 0..tr.words.len() {
        tr.count_word(w, 1);
    }

    let mut vocab = Vocabulary::with_specials();
    for s in &alphabet {
        vocab.insert(s);
    }
    if let Stop::VocabSize(size) = stop {
        if vocab.len() > size {
            return Err(TokenizeError::VocabTooSmall { size, base: vocab.len() });
        }
    }

    let mut merges = Vec::new();
    loop {
        match stop {
            Stop::Merges(n) if merges.len() >= n => break,
            Stop::VocabSize(n) if vocab.len() >= n => break,
            _ => {}
        }
        let Some((pair, _)) = tr.best_pair() else { break };
        let cat = tr.concat(pair);
        let merged = tr.intern(&cat);
        merges.push((tr.symbols[pair.0 as usize].clone(), tr.symbols[pair.1 as usize].clone()));
        vocab.insert(&cat);
        tr.apply(pair, merged);
    }
    Ok((MergeTable::new(merges)?, vocab))
}

/// Segments one word by applying merges in learned order.
pub(crate) fn segment_word(word: &str, ranks: &Ranks) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    syms.push(END_OF_WORD.to_string());
    loop {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..syms.len().saturating_sub(1) {
            if let Some(&r) = ranks.get(&syms[i]).and_then(|m| m.get(&syms[i + 1])) {
                if best.is_none_or(|(br, _)| r < br) {
                    best = Some((r, i));
                }
            }
        }
        let Some((_, first)) = best else { break };
        let (l, r) = (syms[first].clone(), syms[first + 1].clone());
        let mut out = Vec::with_capacity(syms.len());
        let mut i = 0;
        while i < syms.len() {
            if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                out.push(format!("{l}{r}"));
                i += 2;
            } else {
                out.push(std::mem::take(&mut syms[i]));
                i += 1;
            }
        }
        syms = out;
    }
    syms
}
