use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::TokenizeError;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const MASK: &str = "<mask>";
pub const TO_ENG: &str = "<2eng>";
pub const TO_PCM: &str = "<2pcm>";

/// Reserved tokens, in id order. They occupy the lowest ids of every vocabulary.
pub const SPECIALS: [&str; 7] = [PAD, UNK, BOS, EOS, MASK, TO_ENG, TO_PCM];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const TO_ENG_ID: u32 = 5;
pub const TO_PCM_ID: u32 = 6;
pub const NUM_SPECIALS: usize = SPECIALS.len();

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Bijective token/id table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// A vocabulary holding only the special tokens.
    pub fn with_specials() -> Self {
        let mut v = Vocabulary { id_to_token: Vec::new(), token_to_id: HashMap::new() };
        for s in SPECIALS {
            v.insert(s);
        }
        v
    }

    /// Appends `token` if absent; returns its id either way.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One token per line; the id is the line index.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizeError> {
        let mut v = Vocabulary { id_to_token: Vec::new(), token_to_id: HashMap::new() };
        for (i, line) in text.lines().enumerate() {
            if v.token_to_id.contains_key(line) {
                return Err(TokenizeError::Format(format!("duplicate vocabulary token {line:?} on line {}", i + 1)));
            }
            v.insert(line);
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if v.token(i as u32) != Some(s) {
                return Err(TokenizeError::Format(format!("vocabulary line {} must be the special {s}", i + 1)));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizeError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizeError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Whitespace-token frequency vocabulary. Ties break lexicographically.
pub fn train_word_vocab<'a, I>(texts: I, size: usize) -> Result<Vocabulary, TokenizeError>
where
    I: IntoIterator<Item = &'a str>,
{
    if size <= NUM_SPECIALS {
        return Err(TokenizeError::InvalidSize { size, specials: NUM_SPECIALS });
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for text in texts {
        for tok in text.split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TokenizeError::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().filter(|(t, _)| !SPECIALS.contains(t)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut vocab = Vocabulary::with_specials();
    for (tok, _) in ranked.into_iter().take(size - NUM_SPECIALS) {
        vocab.insert(tok);
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = train_word_vocab(["a a b"], NUM_SPECIALS + 2).unwrap();
        assert!(v.id("a").is_some() && v.id("b").is_some());
        let v = train_word_vocab(["b a a"], NUM_SPECIALS + 1).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = train_word_vocab(["b a"], NUM_SPECIALS + 1).unwrap();
        assert_eq!(v.id("a"), Some(NUM_SPECIALS as u32));
        assert!(v.id("b").is_none());
    }

    #[test]
    fn empty_corpus_and_bad_size() {
        assert!(matches!(train_word_vocab(["  "], 20), Err(TokenizeError::EmptyCorpus)));
        assert!(matches!(train_word_vocab(["a"], NUM_SPECIALS), Err(TokenizeError::InvalidSize { .. })));
    }

    #[test]
    fn specials_lead_and_text_round_trips() {
        let v = train_word_vocab(["de boy dey come"], 50).unwrap();
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as u32));
        }
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}
