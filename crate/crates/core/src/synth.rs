//! Seeded generators for the desk-scale fixture corpora: a three-class
//! sentiment task over a Pidgin-like lexicon, a toy English/Pidgin grammar,
//! a small overfitting corpus and a tokenizer corpus.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    write_labeled, write_monolingual, write_parallel_jsonl, CorpusError, LabeledCorpus, LabeledText, LanguageTag, MonoCorpus,
    ParallelCorpus, Sentiment, SentencePair,
};

pub const SENTIMENT_SEED: u64 = 7;
pub const TRANSLATION_SEED: u64 = 11;
pub const OVERFIT_SEED: u64 = 5;
pub const OVERFIT_PAIRS: usize = 64;
pub const TOKENIZER_SEED: u64 = 3;
pub const TOKENIZER_SENTENCES: usize = 1000;

const CONFIGS: [(&str, &str); 3] = [
    ("sentiment.toml", include_str!("../fixtures/sentiment.toml")),
    ("translation.toml", include_str!("../fixtures/translation.toml")),
    ("translation-curve.toml", include_str!("../fixtures/translation-curve.toml")),
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "j", "k", "l", "m", "n", "p", "r", "s", "t", "w", "y", "ch"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// `n` distinct pseudo-words of two or three open syllables, none in `taken`.
fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syl = rng.gen_range(2..=3);
        let w: String = (0..syl).map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())).collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

const PCM_NOUNS: [&str; 24] = [
    "moto", "chop", "house", "pikin", "market", "road", "phone", "shoe", "work", "film", "song", "church", "school",
    "party", "bus", "rice", "beer", "wetin", "doctor", "music", "team", "shop", "cloth", "town",
];
const ENG_NOUNS: [&str; 24] = [
    "car", "food", "house", "child", "market", "road", "phone", "shoe", "job", "film", "song", "church", "school",
    "party", "bus", "rice", "beer", "thing", "doctor", "music", "team", "shop", "cloth", "town",
];

const PCM_FRAMES: [&str; 6] = [
    "di {n} {a}",
    "dis {n} dey {a}",
    "{n} wey {a} na im",
    "my {n} don {a} well",
    "dat {n} na {a} one",
    "see {n} wey dey {a}",
];
const ENG_FRAMES: [&str; 4] = ["the {n} is {a}", "this {n} looks {a}", "my {n} was {a}", "that {n} is a {a} one"];

fn markers_pcm(s: Sentiment) -> [&'static str; 3] {
    match s {
        Sentiment::Positive => ["e make me happy", "i like am well well", "na correct tin"],
        Sentiment::Negative => ["e vex me", "i no like am at all", "na wahala"],
        Sentiment::Neutral => ["na so e be", "e just dey dey", "nothing concern me"],
    }
}

/// Intensifiers that follow an adjective of the given polarity.
fn intensifiers_pcm(s: Sentiment) -> [&'static str; 2] {
    match s {
        Sentiment::Positive => ["well well", "pass"],
        Sentiment::Negative => ["die", "kpatakpata"],
        Sentiment::Neutral => ["sha", "like that"],
    }
}

fn markers_eng(s: Sentiment) -> [&'static str; 3] {
    match s {
        Sentiment::Positive => ["it makes me happy", "i love it", "what a joy"],
        Sentiment::Negative => ["it makes me angry", "i hate it", "what a mess"],
        Sentiment::Neutral => ["it is what it is", "nothing more", "just so"],
    }
}

fn fill(frame: &str, noun: &str, adj: &str) -> String {
    frame.replace("{n}", noun).replace("{a}", adj)
}

/// Sentiment task whose test adjectives never occur in labeled training
/// data but do occur, with polarity cues, in the Pidgin monolingual corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentimentFixture {
    pub train: LabeledCorpus,
    pub dev: LabeledCorpus,
    pub test: LabeledCorpus,
    pub mono_pcm: MonoCorpus,
    pub mono_eng: MonoCorpus,
    /// Adjectives per class: `[train group, dev group, test group]`.
    pub lexicon: Vec<(Sentiment, [Vec<String>; 3])>,
}

#[derive(Clone, Debug)]
pub struct SentimentSizes {
    pub per_group: [usize; 3],
    pub train_per_adj: usize,
    pub eval_per_adj: usize,
    pub mono_pcm: usize,
    pub mono_eng: usize,
}

impl Default for SentimentSizes {
    fn default() -> Self {
        SentimentSizes { per_group: [16, 4, 8], train_per_adj: 4, eval_per_adj: 5, mono_pcm: 4000, mono_eng: 3000 }
    }
}

pub fn sentiment_fixture(seed: u64, sizes: &SentimentSizes) -> SentimentFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: BTreeSet<String> = PCM_NOUNS.iter().chain(&ENG_NOUNS).map(|s| s.to_string()).collect();
    let per_class: usize = sizes.per_group.iter().sum();
    let lexicon: Vec<(Sentiment, [Vec<String>; 3])> = Sentiment::ALL
        .iter()
        .map(|&s| {
            let words = pseudo_words(&mut rng, per_class, &mut taken);
            let (a, rest) = words.split_at(sizes.per_group[0]);
            let (b, c) = rest.split_at(sizes.per_group[1]);
            (s, [a.to_vec(), b.to_vec(), c.to_vec()])
        })
        .collect();
    let pcm = LanguageTag::pcm();
    let labeled = |rng: &mut ChaCha8Rng, group: usize, per_adj: usize, name: &str| {
        let mut items = Vec::new();
        for (s, groups) in &lexicon {
            for adj in &groups[group] {
                for _ in 0..per_adj {
                    let text = fill(PCM_FRAMES.choose(rng).unwrap(), PCM_NOUNS.choose(rng).unwrap(), adj);
                    items.push(LabeledText { text, label: *s });
                }
            }
        }
        items.shuffle(rng);
        LabeledCorpus { name: name.into(), lang: pcm.clone(), items }
    };
    let train = labeled(&mut rng, 0, sizes.train_per_adj, "sentiment-train");
    let dev = labeled(&mut rng, 1, sizes.eval_per_adj, "sentiment-dev");
    let test = labeled(&mut rng, 2, sizes.eval_per_adj, "sentiment-test");

    let all_adj = |s: Sentiment| -> Vec<&String> {
        lexicon.iter().find(|(c, _)| *c == s).unwrap().1.iter().flatten().collect()
    };
    let mut mono_pcm = Vec::with_capacity(sizes.mono_pcm);
    for _ in 0..sizes.mono_pcm {
        let s = *Sentiment::ALL.choose(&mut rng).unwrap();
        let adjs = all_adj(s);
        let a = adjs.choose(&mut rng).unwrap();
        let noun = PCM_NOUNS.choose(&mut rng).unwrap();
        let line = if rng.gen_bool(0.5) {
            let cued = format!("{a} {}", intensifiers_pcm(s).choose(&mut rng).unwrap());
            format!("{} , {}", fill(PCM_FRAMES.choose(&mut rng).unwrap(), noun, &cued), markers_pcm(s).choose(&mut rng).unwrap())
        } else {
            let b = adjs.choose(&mut rng).unwrap();
            format!("di {noun} {a} and e {b} {} too", intensifiers_pcm(s).choose(&mut rng).unwrap())
        };
        mono_pcm.push(line);
    }
    // English shares the nouns that Pidgin spells the same way and the first
    // two training adjectives of each class.
    let eng_adj: Vec<(Sentiment, Vec<String>)> = lexicon
        .iter()
        .map(|(s, groups)| {
            let mut v: Vec<String> = groups[0].iter().take(2).cloned().collect();
            v.extend(pseudo_words(&mut rng, 6, &mut taken));
            (*s, v)
        })
        .collect();
    let mut mono_eng = Vec::with_capacity(sizes.mono_eng);
    for _ in 0..sizes.mono_eng {
        let (s, adjs) = eng_adj.choose(&mut rng).unwrap();
        let line = format!(
            "{} , {}",
            fill(ENG_FRAMES.choose(&mut rng).unwrap(), ENG_NOUNS.choose(&mut rng).unwrap(), adjs.choose(&mut rng).unwrap()),
            markers_eng(*s).choose(&mut rng).unwrap()
        );
        mono_eng.push(line);
    }
    SentimentFixture {
        train,
        dev,
        test,
        mono_pcm: MonoCorpus::new("sentiment-mono-pcm", pcm, mono_pcm),
        mono_eng: MonoCorpus::new("sentiment-mono-eng", LanguageTag::eng(), mono_eng),
        lexicon,
    }
}

/// A toy grammar pair: English adjective-noun order against Pidgin
/// noun-`wey`-adjective order, with separate word lists on each side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslationFixture {
    pub parallel: ParallelCorpus,
    pub mono_eng: MonoCorpus,
    pub mono_pcm: MonoCorpus,
}

#[derive(Clone, Debug)]
pub struct GrammarSizes {
    pub nouns: usize,
    pub adjectives: usize,
    pub verbs: usize,
    pub parallel: usize,
    pub mono: usize,
}

impl Default for GrammarSizes {
    fn default() -> Self {
        GrammarSizes { nouns: 40, adjectives: 12, verbs: 12, parallel: 500, mono: 1500 }
    }
}

struct Lexeme {
    eng: String,
    pcm: String,
}

struct Grammar {
    nouns: Vec<Lexeme>,
    adjectives: Vec<Lexeme>,
    verbs: Vec<Lexeme>,
}

impl Grammar {
    fn new(rng: &mut ChaCha8Rng, sizes: &GrammarSizes) -> Self {
        let mut taken = BTreeSet::new();
        let mut lex = |n: usize| -> Vec<Lexeme> {
            let e = pseudo_words(rng, n, &mut taken);
            let p = pseudo_words(rng, n, &mut taken);
            e.into_iter().zip(p).map(|(eng, pcm)| Lexeme { eng, pcm }).collect()
        };
        Grammar { nouns: lex(sizes.nouns), adjectives: lex(sizes.adjectives), verbs: lex(sizes.verbs) }
    }

    /// One sentence in both languages.
    fn sentence(&self, rng: &mut ChaCha8Rng) -> (String, String) {
        let n1 = self.nouns.choose(rng).unwrap();
        let n2 = self.nouns.choose(rng).unwrap();
        let a = self.adjectives.choose(rng).unwrap();
        let v = self.verbs.choose(rng).unwrap();
        match rng.gen_range(0..3) {
            0 => (
                format!("the {} {} {} the {}", a.eng, n1.eng, v.eng, n2.eng),
                format!("di {} wey {} {} di {}", n1.pcm, a.pcm, v.pcm, n2.pcm),
            ),
            1 => (format!("the {} {} the {}", n1.eng, v.eng, n2.eng), format!("di {} {} di {}", n1.pcm, v.pcm, n2.pcm)),
            _ => (
                format!("the {} did not {} the {} {}", n1.eng, v.eng, a.eng, n2.eng),
                format!("di {} no {} di {} wey {}", n1.pcm, v.pcm, n2.pcm, a.pcm),
            ),
        }
    }
}

pub fn translation_fixture(seed: u64, sizes: &GrammarSizes) -> TranslationFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grammar::new(&mut rng, sizes);
    let langs = (LanguageTag::eng(), LanguageTag::pcm());
    let mut parallel = ParallelCorpus::new("toy-parallel", langs.clone());
    let mut seen = BTreeSet::new();
    while parallel.len() < sizes.parallel {
        let (e, p) = g.sentence(&mut rng);
        if seen.insert(e.clone()) {
            parallel.pairs.push(SentencePair::real(&e, &p, &langs, "toy-parallel"));
        }
    }
    // Monolingual sides come from separate draws, excluding parallel sentences.
    let mut mono_eng = Vec::new();
    let mut mono_pcm = Vec::new();
    while mono_eng.len() < sizes.mono || mono_pcm.len() < sizes.mono {
        let (e, p) = g.sentence(&mut rng);
        if !seen.insert(e.clone()) {
            continue;
        }
        if rng.gen_bool(0.5) {
            if mono_eng.len() < sizes.mono {
                mono_eng.push(e);
            }
        } else if mono_pcm.len() < sizes.mono {
            mono_pcm.push(p);
        }
    }
    TranslationFixture {
        parallel,
        mono_eng: MonoCorpus::new("toy-mono-eng", LanguageTag::eng(), mono_eng),
        mono_pcm: MonoCorpus::new("toy-mono-pcm", LanguageTag::pcm(), mono_pcm),
    }
}

/// `n` short pairs where the Pidgin side reverses the word order and maps
/// each word through a fixed lexicon.
pub fn overfit_corpus(seed: u64, n: usize) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let eng = pseudo_words(&mut rng, 40, &mut taken);
    let pcm = pseudo_words(&mut rng, 40, &mut taken);
    let langs = (LanguageTag::eng(), LanguageTag::pcm());
    let mut c = ParallelCorpus::new("overfit", langs.clone());
    while c.len() < n {
        let idx: Vec<usize> = (0..rng.gen_range(3..7)).map(|_| rng.gen_range(0..eng.len())).collect();
        let e: Vec<&str> = idx.iter().map(|&i| eng[i].as_str()).collect();
        let p: Vec<&str> = idx.iter().rev().map(|&i| pcm[i].as_str()).collect();
        c.pairs.push(SentencePair::real(&e.join(" "), &p.join(" "), &langs, "overfit"));
    }
    c
}

/// `n` mixed-language sentences for tokenizer tests.
pub fn tokenizer_corpus(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Grammar::new(&mut rng, &GrammarSizes { nouns: 80, adjectives: 20, verbs: 20, parallel: 0, mono: 0 });
    (0..n)
        .map(|i| {
            let (e, p) = g.sentence(&mut rng);
            if i % 2 == 0 {
                e
            } else {
                p
            }
        })
        .collect()
}

/// Writes every fixture corpus and the experiment configs that reference them
/// under `dir`. Returns the written paths in a fixed order.
pub fn write_fixtures(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mkdir = |d: &Path| fs::create_dir_all(d).map_err(|source| CorpusError::Io { path: d.into(), source });
    let mut written = Vec::new();
    let s = sentiment_fixture(SENTIMENT_SEED, &SentimentSizes::default());
    let sd = dir.join("sentiment");
    mkdir(&sd)?;
    for (name, c) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        let p = sd.join(format!("{name}.jsonl"));
        write_labeled(c, &p)?;
        written.push(p);
    }
    for (name, c) in [("mono_pcm", &s.mono_pcm), ("mono_eng", &s.mono_eng)] {
        let p = sd.join(format!("{name}.txt"));
        write_monolingual(c, &p)?;
        written.push(p);
    }
    let t = translation_fixture(TRANSLATION_SEED, &GrammarSizes::default());
    let td = dir.join("translation");
    mkdir(&td)?;
    let p = td.join("toy.jsonl");
    write_parallel_jsonl(&t.parallel, &p)?;
    written.push(p);
    for (name, c) in [("mono_pcm", &t.mono_pcm), ("mono_eng", &t.mono_eng)] {
        let p = td.join(format!("{name}.txt"));
        write_monolingual(c, &p)?;
        written.push(p);
    }
    let p = dir.join("overfit.jsonl");
    write_parallel_jsonl(&overfit_corpus(OVERFIT_SEED, OVERFIT_PAIRS), &p)?;
    written.push(p);
    let p = dir.join("bpe_corpus.txt");
    let bpe = MonoCorpus::new("bpe_corpus", LanguageTag::pcm(), tokenizer_corpus(TOKENIZER_SEED, TOKENIZER_SENTENCES));
    write_monolingual(&bpe, &p)?;
    written.push(p);
    for (name, text) in CONFIGS {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|source| CorpusError::Io { path: p.clone(), source })?;
        written.push(p);
    }
    Ok(written)
}
