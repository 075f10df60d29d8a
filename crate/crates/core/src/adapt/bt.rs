use serde::Serialize;

use super::train::translate_texts;
use super::{AdaptError, Direction};
use crate::corpus::{deduplicate, MonoCorpus, Origin, ParallelCorpus, SentencePair};
use crate::model::{Checkpoint, DecodeConfig};
use crate::tokenize::TokenizerSpec;

pub const BT_SOURCE: &str = "bt";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BtReport {
    pub forward: usize,
    pub reverse: usize,
    /// Inputs whose translation decoded to nothing; they produce no pair.
    pub empty_outputs: usize,
    /// Pairs dropped by the union.
    pub duplicates: usize,
}

#[derive(Clone, Debug)]
pub struct BtOutcome {
    pub corpus: ParallelCorpus,
    pub report: BtReport,
}

/// Pairs each sentence `x` of `mono` with its translation `y'` along `dir`.
/// Pairs are oriented `(x, y')` and flagged synthetic.
pub fn back_translate(
    ckpt: &Checkpoint,
    tok: &TokenizerSpec,
    mono: &MonoCorpus,
    dir: &Direction,
    decode: &DecodeConfig,
) -> Result<BtOutcome, AdaptError> {
    if mono.lang != dir.src_lang {
        return Err(AdaptError::Incompatible(format!(
            "monolingual corpus {} is {} but direction is {}",
            mono.name,
            mono.lang.as_str(),
            dir.label()
        )));
    }
    let outputs = translate_texts(ckpt, tok, &mono.sentences, dir, decode)?;
    let mut corpus = ParallelCorpus::new(BT_SOURCE, (dir.src_lang.clone(), dir.tgt_lang.clone()));
    let mut report = BtReport::default();
    for (x, y) in mono.sentences.iter().zip(outputs) {
        if y.trim().is_empty() {
            report.empty_outputs += 1;
            continue;
        }
        corpus.pairs.push(SentencePair {
            src: x.clone(),
            tgt: y,
            src_lang: dir.src_lang.clone(),
            tgt_lang: dir.tgt_lang.clone(),
            origin: Origin::Synthetic,
            source_name: BT_SOURCE.into(),
            key: None,
        });
    }
    report.forward = corpus.len();
    log::info!("event=back_translate direction={} inputs={} pairs={} empty={}", dir.label(), mono.len(), corpus.len(), report.empty_outputs);
    Ok(BtOutcome { corpus, report })
}

/// Union of forward and reverse back-translation, duplicates removed.
/// An empty `mono_tgt` yields the forward corpus alone.
pub fn bidirectional_bt(
    ckpt: &Checkpoint,
    tok: &TokenizerSpec,
    mono_src: &MonoCorpus,
    mono_tgt: &MonoCorpus,
    dir_fwd: &Direction,
    dir_rev: &Direction,
    decode: &DecodeConfig,
) -> Result<BtOutcome, AdaptError> {
    if dir_rev.src_lang != dir_fwd.tgt_lang || dir_rev.tgt_lang != dir_fwd.src_lang {
        return Err(AdaptError::Incompatible(format!("{} is not the reverse of {}", dir_rev.label(), dir_fwd.label())));
    }
    let fwd = back_translate(ckpt, tok, mono_src, dir_fwd, decode)?;
    let rev = if mono_tgt.is_empty() {
        BtOutcome { corpus: ParallelCorpus::new(BT_SOURCE, fwd.corpus.langs.clone()), report: BtReport::default() }
    } else {
        back_translate(ckpt, tok, mono_tgt, dir_rev, decode)?
    };
    let mut all = fwd.corpus;
    all.pairs.extend(rev.corpus.pairs);
    let total = all.len();
    let corpus = deduplicate(&all);
    let report = BtReport {
        forward: fwd.report.forward,
        reverse: rev.report.forward,
        empty_outputs: fwd.report.empty_outputs + rev.report.empty_outputs,
        duplicates: total - corpus.len(),
    };
    log::info!("event=bidirectional_bt pairs={} duplicates={}", corpus.len(), report.duplicates);
    Ok(BtOutcome { corpus, report })
}
