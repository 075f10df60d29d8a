//! Word-level and BPE tokenizers over one shared source/target vocabulary.

mod bpe;
mod vocab;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpe::{train_bpe, train_bpe_to_size, MergeTable, END_OF_WORD};
pub use vocab::{
    is_special, train_word_vocab, Vocabulary, BOS, BOS_ID, EOS, EOS_ID, MASK, MASK_ID, NUM_SPECIALS, PAD, PAD_ID,
    SPECIALS, TO_ENG, TO_ENG_ID, TO_PCM, TO_PCM_ID, UNK, UNK_ID,
};

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("vocabulary size {size} must exceed the {specials} special tokens")]
    InvalidSize { size: usize, specials: usize },
    #[error("target vocabulary size {size} is below the {base} base symbols")]
    VocabTooSmall { size: usize, base: usize },
    #[error("token id {id} out of range for vocabulary of {len}")]
    IdOutOfRange { id: u32, len: usize },
    #[error("malformed tokenizer file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Word,
    Bpe,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: TokenizerKind,
    end_of_word_marker: String,
}

/// A trained tokenizer.
#[derive(Clone, Debug)]
pub struct TokenizerSpec {
    kind: TokenizerKind,
    vocab: Vocabulary,
    merges: Option<MergeTable>,
    ranks: bpe::Ranks,
}

impl PartialEq for TokenizerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.vocab == other.vocab && self.merges == other.merges
    }
}

impl TokenizerSpec {
    pub fn word(vocab: Vocabulary) -> Self {
        TokenizerSpec { kind: TokenizerKind::Word, vocab, merges: None, ranks: Default::default() }
    }

    pub fn bpe(merges: MergeTable, vocab: Vocabulary) -> Self {
        let ranks = merges.ranks();
        TokenizerSpec { kind: TokenizerKind::Bpe, vocab, merges: Some(merges), ranks }
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> Option<&MergeTable> {
        self.merges.as_ref()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn end_of_word_marker(&self) -> &str {
        END_OF_WORD
    }

    pub fn encode(&self, text: &str, add_bos_eos: bool) -> Vec<u32> {
        let mut ids = Vec::new();
        if add_bos_eos {
            ids.push(BOS_ID);
        }
        for word in text.split_whitespace() {
            match self.kind {
                TokenizerKind::Word => ids.push(self.vocab.id(word).unwrap_or(UNK_ID)),
                TokenizerKind::Bpe => {
                    for sym in bpe::segment_word(word, &self.ranks) {
                        ids.push(self.vocab.id(&sym).unwrap_or(UNK_ID));
                    }
                }
            }
        }
        if add_bos_eos {
            ids.push(EOS_ID);
        }
        ids
    }

    /// Inverse of [`encode`](Self::encode) up to whitespace; specials are dropped.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizeError> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.vocab.token(id).ok_or(TokenizeError::IdOutOfRange { id, len: self.vocab.len() })?;
            if is_special(id) {
                continue;
            }
            match self.kind {
                TokenizerKind::Word => {
                    out.push_str(tok);
                    out.push(' ');
                }
                TokenizerKind::Bpe => match tok.strip_suffix(END_OF_WORD) {
                    Some(stem) => {
                        out.push_str(stem);
                        out.push(' ');
                    }
                    None => out.push_str(tok),
                },
            }
        }
        Ok(out.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    /// Decoded tokens as whitespace-separated words, for scoring.
    pub fn decode_words(&self, ids: &[u32]) -> Result<Vec<String>, TokenizeError> {
        Ok(self.decode(ids)?.split_whitespace().map(String::from).collect())
    }

    /// Writes `tokenizer.json`, `vocab.txt` and, for BPE, `merges.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TokenizeError> {
        fs::create_dir_all(dir)?;
        let header = Header { kind: self.kind, end_of_word_marker: END_OF_WORD.to_string() };
        fs::write(dir.join("tokenizer.json"), serde_json::to_string_pretty(&header).expect("header serializes"))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        if let Some(m) = &self.merges {
            fs::write(dir.join("merges.txt"), m.to_text())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TokenizeError> {
        let header: Header = serde_json::from_str(&fs::read_to_string(dir.join("tokenizer.json"))?)
            .map_err(|e| TokenizeError::Format(format!("tokenizer.json: {e}")))?;
        if header.end_of_word_marker != END_OF_WORD {
            return Err(TokenizeError::Format(format!("unsupported end-of-word marker {:?}", header.end_of_word_marker)));
        }
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        match header.kind {
            TokenizerKind::Word => Ok(Self::word(vocab)),
            TokenizerKind::Bpe => {
                let merges = MergeTable::from_text(&fs::read_to_string(dir.join("merges.txt"))?)?;
                Ok(Self::bpe(merges, vocab))
            }
        }
    }
}
