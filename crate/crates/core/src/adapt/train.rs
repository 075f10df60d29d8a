use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::masking::{mask_tokens_with, MaskingConfig};
use super::{check_tokenizer, derive_seed, AdaptError, Direction};
use crate::corpus::{LabeledCorpus, MonoCorpus, Origin, ParallelCorpus};
use crate::eval::{bleu_on_text, macro_f1, Smoothing};
use crate::model::{
    classify, predict_class, train_step, translate, Batch, Checkpoint, ClassBatch, DecodeConfig, MaskedBatch,
    ModelError, Objective, OptimizerState, Stage, TrainHyper,
};
use crate::tokenize::{is_special, TokenizerSpec, EOS_ID};

/// Length and optimizer settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub hyper: TrainHyper,
    /// Dev evaluation interval for fine-tuning; 0 evaluates only at the end.
    pub eval_every: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig { steps: 1000, batch_size: 32, hyper: TrainHyper::default(), eval_every: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    /// Batch loss after each step.
    pub losses: Vec<f64>,
    /// `(step, dev metric)` at each evaluation.
    pub dev_scores: Vec<(u64, f64)>,
    pub best_step: Option<u64>,
    /// Training examples consumed per direction label.
    pub direction_examples: BTreeMap<String, u64>,
}

impl TrainLog {
    pub fn best_dev(&self) -> Option<f64> {
        self.dev_scores.iter().map(|&(_, s)| s).fold(None, |m, s| Some(m.map_or(s, |m: f64| m.max(s))))
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub ckpt: Checkpoint,
    pub log: TrainLog,
}

enum OwnedBatch {
    Seq(Batch),
    Mlm(MaskedBatch),
    Cls(ClassBatch),
}

impl OwnedBatch {
    fn objective(&self, label_smoothing: f64) -> Objective<'_> {
        match self {
            OwnedBatch::Seq(batch) => Objective::Seq2Seq { batch, label_smoothing },
            OwnedBatch::Mlm(b) => Objective::Mlm(b),
            OwnedBatch::Cls(b) => Objective::Classify(b),
        }
    }
}

type Evaluator<'a> = Box<dyn FnMut(&Checkpoint) -> Result<f64, AdaptError> + 'a>;

/// Cycles through `n_items` in seeded shuffled epochs, one batch per step.
fn run_stage(
    mut ckpt: Checkpoint,
    stage: Stage,
    n_items: usize,
    cfg: &StageConfig,
    seed: u64,
    mut make: impl FnMut(&[usize], &mut ChaCha8Rng) -> Result<OwnedBatch, AdaptError>,
    mut evaluate: Option<Evaluator<'_>>,
) -> Result<StageOutcome, AdaptError> {
    let mut log = TrainLog::default();
    if cfg.steps > 0 && n_items == 0 {
        return Err(AdaptError::EmptyData(stage.as_str()));
    }
    if cfg.batch_size == 0 {
        return Err(AdaptError::InvalidPlan("batch_size must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "order"));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "batch"));
    let mut opt = OptimizerState::new(ckpt.params());
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut cursor = n_items;
    let mut best: Option<(f64, Checkpoint)> = None;
    let bs = cfg.batch_size.min(n_items.max(1));
    for step in 1..=cfg.steps {
        let mut idx = Vec::with_capacity(bs);
        while idx.len() < bs {
            if cursor == n_items {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch = make(&idx, &mut batch_rng)?;
        match train_step(&mut ckpt, &mut opt, &batch.objective(cfg.hyper.label_smoothing), &cfg.hyper) {
            Ok(s) => {
                log::debug!("stage={} step={step} loss={:.6} grad_norm={:.4} lr={:.3e}", stage.as_str(), s.loss, s.grad_norm, s.lr);
                log.losses.push(s.loss);
            }
            Err(source @ ModelError::NonFiniteLoss { .. }) => {
                log::warn!("stage={} step={step} event=diverged", stage.as_str());
                return Err(AdaptError::Diverged { stage, step, last_good: Box::new(ckpt), source });
            }
            Err(e) => return Err(e.into()),
        }
        if let Some(eval) = evaluate.as_mut() {
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps {
                let mut snap = ckpt.clone();
                snap.round_to_storage_precision();
                let score = eval(&snap)?;
                log::info!("stage={} step={step} dev={score:.6}", stage.as_str());
                log.dev_scores.push((step, score));
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    log.best_step = Some(step);
                    best = Some((score, snap));
                }
            }
        }
    }
    if let Some((_, snap)) = best {
        ckpt = snap;
    } else if cfg.steps > 0 {
        ckpt.round_to_storage_precision();
    }
    ckpt.push_stage(stage)?;
    if let Some(last) = log.losses.last() {
        log::info!("stage={} steps={} final_loss={last:.6}", stage.as_str(), cfg.steps);
    }
    Ok(StageOutcome { ckpt, log })
}

/// `[tag] + tokens + [<eos>]`, truncated to fit `max_len`.
pub(crate) fn encode_source(tok: &TokenizerSpec, text: &str, tag: u32, max_len: usize) -> Vec<u32> {
    let mut ids = vec![tag];
    ids.extend(tok.encode(text, false).into_iter().take(max_len.saturating_sub(2)));
    ids.push(EOS_ID);
    ids
}

/// Target tokens, leaving room for `<bos>`/`<eos>`.
pub(crate) fn encode_target(tok: &TokenizerSpec, text: &str, max_len: usize) -> Vec<u32> {
    tok.encode(text, false).into_iter().take(max_len.saturating_sub(1)).collect()
}

/// `tokens + [<eos>]` for encoder-only objectives.
pub(crate) fn encode_plain(tok: &TokenizerSpec, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tok.encode(text, false).into_iter().take(max_len.saturating_sub(1)).collect();
    ids.push(EOS_ID);
    ids
}

/// Decodes every text in order; `texts` are in `dir.src_lang`.
pub fn translate_texts(
    ckpt: &Checkpoint,
    tok: &TokenizerSpec,
    texts: &[String],
    dir: &Direction,
    decode: &DecodeConfig,
) -> Result<Vec<String>, AdaptError> {
    check_tokenizer(ckpt, tok)?;
    let tag = dir.tag_id(tok)?;
    let max_src = ckpt.config().max_len.saturating_sub(2);
    texts
        .par_iter()
        .map(|t| {
            let ids: Vec<u32> = tok.encode(t, false).into_iter().take(max_src).collect();
            let out = translate(ckpt, &ids, tag, decode)?;
            Ok(tok.decode(&out)?)
        })
        .collect()
}

/// Corpus BLEU of `dir` over the pairs of `corpus`.
pub(crate) fn bleu_for(
    ckpt: &Checkpoint,
    tok: &TokenizerSpec,
    corpus: &ParallelCorpus,
    dir: &Direction,
    decode: &DecodeConfig,
    smoothing: Smoothing,
) -> Result<f64, AdaptError> {
    let mut src = Vec::with_capacity(corpus.len());
    let mut refs = Vec::with_capacity(corpus.len());
    for p in &corpus.pairs {
        match (p.side(&dir.src_lang), p.side(&dir.tgt_lang)) {
            (Some(s), Some(t)) => {
                src.push(s.to_string());
                refs.push(t.to_string());
            }
            _ => return Err(AdaptError::Incompatible(format!("corpus {} lacks direction {}", corpus.name, dir.label()))),
        }
    }
    let hyps = translate_texts(ckpt, tok, &src, dir, decode)?;
    Ok(bleu_on_text(&hyps, &refs, smoothing)?.score)
}

/// Class probabilities for each text, in `Sentiment::ALL` order.
pub fn predict_probs(ckpt: &Checkpoint, tok: &TokenizerSpec, texts: &[&str]) -> Result<Vec<[f64; 3]>, AdaptError> {
    // `classify` appends `<eos>` itself.
    texts
        .par_iter()
        .map(|t| {
            let ids = tok.encode(t, false);
            let ids = if ids.is_empty() { vec![crate::tokenize::UNK_ID] } else { ids };
            Ok(classify(ckpt, &ids)?)
        })
        .collect()
}

pub fn predict_labels(ckpt: &Checkpoint, tok: &TokenizerSpec, texts: &[&str]) -> Result<Vec<usize>, AdaptError> {
    Ok(predict_probs(ckpt, tok, texts)?.iter().map(predict_class).collect())
}

pub(crate) fn f1_for(ckpt: &Checkpoint, tok: &TokenizerSpec, data: &LabeledCorpus) -> Result<f64, AdaptError> {
    let texts: Vec<&str> = data.items.iter().map(|i| i.text.as_str()).collect();
    let gold: Vec<usize> = data.items.iter().map(|i| i.label.index()).collect();
    Ok(macro_f1(&predict_labels(ckpt, tok, &texts)?, &gold)?)
}

/// Masked-LM training on monolingual text. Masks are redrawn every time a
/// sentence is batched.
pub fn cat_pretrain(
    ckpt: Checkpoint,
    tok: &TokenizerSpec,
    mono: &MonoCorpus,
    masking: &MaskingConfig,
    cfg: &StageConfig,
    seed: u64,
) -> Result<StageOutcome, AdaptError> {
    check_tokenizer(&ckpt, tok)?;
    masking.validate()?;
    let (max_len, vocab) = (ckpt.config().max_len, ckpt.config().vocab_size);
    let items: Vec<Vec<u32>> = mono
        .sentences
        .iter()
        .map(|s| encode_plain(tok, s, max_len))
        .filter(|ids| ids.iter().any(|&id| !is_special(id)))
        .collect();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mask/{}", masking.seed)));
    run_stage(
        ckpt,
        Stage::Cat,
        items.len(),
        cfg,
        seed,
        |idx, _| {
            let rows = idx
                .iter()
                .map(|&i| {
                    let m = mask_tokens_with(&items[i], masking, vocab, &mut mask_rng)?;
                    Ok((m.ids.clone(), m.targets()))
                })
                .collect::<Result<Vec<_>, AdaptError>>()?;
            Ok(OwnedBatch::Mlm(MaskedBatch::new(&rows)))
        },
        None,
    )
}

struct TransItem {
    src: Vec<u32>,
    tgt: Vec<u32>,
    direction: usize,
}

fn push_item(
    items: &mut Vec<TransItem>,
    labels: &mut Vec<String>,
    tok: &TokenizerSpec,
    max_len: usize,
    dir: &Direction,
    src: &str,
    tgt: &str,
) -> Result<(), AdaptError> {
    let label = dir.label();
    let direction = match labels.iter().position(|l| *l == label) {
        Some(i) => i,
        None => {
            labels.push(label);
            labels.len() - 1
        }
    };
    let tag = dir.tag_id(tok)?;
    items.push(TransItem { src: encode_source(tok, src, tag, max_len), tgt: encode_target(tok, tgt, max_len), direction });
    Ok(())
}

fn seq2seq_stage(
    ckpt: Checkpoint,
    stage: Stage,
    items: Vec<TransItem>,
    labels: Vec<String>,
    cfg: &StageConfig,
    seed: u64,
    evaluate: Option<Evaluator<'_>>,
) -> Result<StageOutcome, AdaptError> {
    let mut counts = vec![0u64; labels.len()];
    let mut out = run_stage(
        ckpt,
        stage,
        items.len(),
        cfg,
        seed,
        |idx, _| {
            let rows: Vec<(Vec<u32>, Vec<u32>)> = idx
                .iter()
                .map(|&i| {
                    counts[items[i].direction] += 1;
                    (items[i].src.clone(), items[i].tgt.clone())
                })
                .collect();
            Ok(OwnedBatch::Seq(Batch::new(&rows)))
        },
        evaluate,
    )?;
    out.log.direction_examples = labels.into_iter().zip(counts).collect();
    Ok(out)
}

/// Supervised training on back-translated data. Each synthetic pair is
/// trained from its generated side to its gold side; `both_orientations`
/// adds the opposite orientation too. Real pairs train both ways.
pub fn tat_train(
    ckpt: Checkpoint,
    tok: &TokenizerSpec,
    d_bt: &ParallelCorpus,
    both_orientations: bool,
    cfg: &StageConfig,
    seed: u64,
) -> Result<StageOutcome, AdaptError> {
    check_tokenizer(&ckpt, tok)?;
    let max_len = ckpt.config().max_len;
    let (mut items, mut labels) = (Vec::new(), Vec::new());
    for p in &d_bt.pairs {
        let gold_from_synth = Direction::new(p.tgt_lang.clone(), p.src_lang.clone())?;
        push_item(&mut items, &mut labels, tok, max_len, &gold_from_synth, &p.tgt, &p.src)?;
        if both_orientations || p.origin == Origin::Real {
            push_item(&mut items, &mut labels, tok, max_len, &gold_from_synth.reversed(), &p.src, &p.tgt)?;
        }
    }
    seq2seq_stage(ckpt, Stage::Tat, items, labels, cfg, seed, None)
}

/// Translation fine-tuning on both directions of every pair. With a dev
/// set, the returned checkpoint is the evaluation point with the highest
/// direction-averaged dev BLEU.
#[allow(clippy::too_many_arguments)]
pub fn finetune_translation(
    ckpt: Checkpoint,
    tok: &TokenizerSpec,
    train: &ParallelCorpus,
    dev: Option<&ParallelCorpus>,
    decode: &DecodeConfig,
    smoothing: Smoothing,
    cfg: &StageConfig,
    seed: u64,
) -> Result<StageOutcome, AdaptError> {
    check_tokenizer(&ckpt, tok)?;
    if train.is_empty() {
        return Err(AdaptError::EmptyData("ft"));
    }
    let max_len = ckpt.config().max_len;
    let (mut items, mut labels) = (Vec::new(), Vec::new());
    for p in &train.pairs {
        let d = Direction::new(p.src_lang.clone(), p.tgt_lang.clone())?;
        push_item(&mut items, &mut labels, tok, max_len, &d, &p.src, &p.tgt)?;
        push_item(&mut items, &mut labels, tok, max_len, &d.reversed(), &p.tgt, &p.src)?;
    }
    let evaluate: Option<Evaluator<'_>> = match dev {
        Some(dev) if !dev.is_empty() => {
            let fwd = Direction::new(dev.langs.0.clone(), dev.langs.1.clone())?;
            let dirs = [fwd.clone(), fwd.reversed()];
            Some(Box::new(move |c: &Checkpoint| {
                let mut total = 0.0;
                for d in &dirs {
                    total += bleu_for(c, tok, dev, d, decode, smoothing)?;
                }
                Ok(total / dirs.len() as f64)
            }))
        }
        _ => None,
    };
    seq2seq_stage(ckpt, Stage::Ft, items, labels, cfg, seed, evaluate)
}

/// Sentiment fine-tuning with best-dev macro-F1 selection.
pub fn finetune_classifier(
    ckpt: Checkpoint,
    tok: &TokenizerSpec,
    train: &LabeledCorpus,
    dev: Option<&LabeledCorpus>,
    cfg: &StageConfig,
    seed: u64,
) -> Result<StageOutcome, AdaptError> {
    check_tokenizer(&ckpt, tok)?;
    if train.is_empty() {
        return Err(AdaptError::EmptyData("ft"));
    }
    let max_len = ckpt.config().max_len;
    let items: Vec<(Vec<u32>, usize)> =
        train.items.iter().map(|i| (encode_plain(tok, &i.text, max_len), i.label.index())).collect();
    let evaluate: Option<Evaluator<'_>> = match dev {
        Some(dev) if !dev.is_empty() => Some(Box::new(move |c: &Checkpoint| f1_for(c, tok, dev))),
        _ => None,
    };
    run_stage(
        ckpt,
        Stage::Ft,
        items.len(),
        cfg,
        seed,
        |idx, _| Ok(OwnedBatch::Cls(ClassBatch::new(&idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>()))),
        evaluate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledText, LanguageTag, Sentiment, SentencePair};
    use crate::model::{init_model, mlm_loss, ModelConfig};
    use crate::tokenize::train_word_vocab;

    fn toy() -> (TokenizerSpec, Vec<String>) {
        let texts: Vec<String> = (0..12).map(|i| format!("w{} w{} w{}", i % 5, (i + 1) % 7, i % 3)).collect();
        let tok = TokenizerSpec::word(train_word_vocab(texts.iter().map(String::as_str), 64).unwrap());
        (tok, texts)
    }

    fn fast(steps: u64) -> StageConfig {
        StageConfig {
            steps,
            batch_size: 4,
            hyper: TrainHyper { lr: 3e-3, warmup_steps: 0, ..TrainHyper::default() },
            eval_every: 0,
        }
    }

    #[test]
    fn zero_step_stage_keeps_parameters_and_appends_lineage() {
        let (tok, texts) = toy();
        let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size()), 3).unwrap();
        let mono = MonoCorpus::new("m", LanguageTag::pcm(), texts);
        let out = cat_pretrain(ckpt.clone(), &tok, &mono, &MaskingConfig::default(), &fast(0), 1).unwrap();
        assert_eq!(out.ckpt.params(), ckpt.params());
        assert_eq!(out.ckpt.lineage(), &[Stage::Init, Stage::Cat]);
        assert!(out.log.losses.is_empty());
    }

    #[test]
    fn cat_lowers_mlm_loss() {
        let (tok, texts) = toy();
        let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size()), 3).unwrap();
        let mono = MonoCorpus::new("m", LanguageTag::pcm(), texts.clone());
        let masking = MaskingConfig { mask_rate: 0.4, ..MaskingConfig::default() };
        let probe: Vec<(Vec<u32>, Vec<Option<u32>>)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let ids = encode_plain(&tok, t, 64);
                let m = crate::adapt::mask_tokens(&ids, &MaskingConfig { seed: i as u64, ..masking.clone() }, tok.vocab_size()).unwrap();
                (m.ids.clone(), m.targets())
            })
            .collect();
        let probe = MaskedBatch::new(&probe);
        let before = mlm_loss(&ckpt, &probe).unwrap().0;
        let out = cat_pretrain(ckpt, &tok, &mono, &masking, &fast(200), 5).unwrap();
        assert_eq!(out.log.losses.len(), 200);
        assert!(mlm_loss(&out.ckpt, &probe).unwrap().0 < before);
    }

    #[test]
    fn tat_counts_both_directions_and_is_deterministic() {
        let (tok, texts) = toy();
        let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size()), 3).unwrap();
        let langs = (LanguageTag::eng(), LanguageTag::pcm());
        let mut bt = ParallelCorpus::new("bt", langs.clone());
        for (i, t) in texts.iter().enumerate() {
            let mut p = SentencePair::real(t, &texts[(i + 1) % texts.len()], &langs, "bt");
            p.origin = Origin::Synthetic;
            if i % 2 == 1 {
                std::mem::swap(&mut p.src, &mut p.tgt);
                std::mem::swap(&mut p.src_lang, &mut p.tgt_lang);
            }
            bt.pairs.push(p);
        }
        let a = tat_train(ckpt.clone(), &tok, &bt, false, &fast(6), 9).unwrap();
        let b = tat_train(ckpt, &tok, &bt, false, &fast(6), 9).unwrap();
        assert_eq!(a.ckpt, b.ckpt);
        assert_eq!(a.log.direction_examples.len(), 2);
        assert!(a.log.direction_examples.values().all(|&n| n > 0));
        assert_eq!(a.ckpt.lineage(), &[Stage::Init, Stage::Tat]);
    }

    #[test]
    fn finetune_returns_best_dev_checkpoint() {
        let (tok, texts) = toy();
        let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size()), 4).unwrap();
        let items: Vec<LabeledText> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| LabeledText { text: t.clone(), label: Sentiment::from_index(i % 3).unwrap() })
            .collect();
        let data = LabeledCorpus { name: "s".into(), lang: LanguageTag::pcm(), items };
        let cfg = StageConfig { eval_every: 5, ..fast(30) };
        let out = finetune_classifier(ckpt, &tok, &data, Some(&data), &cfg, 2).unwrap();
        assert_eq!(out.log.dev_scores.len(), 6);
        let best = out.log.best_dev().unwrap();
        assert_eq!(f1_for(&out.ckpt, &tok, &data).unwrap(), best);
        assert_eq!(out.ckpt.lineage(), &[Stage::Init, Stage::Ft]);
        let empty = LabeledCorpus { items: vec![], ..data.clone() };
        let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size()), 4).unwrap();
        assert!(matches!(finetune_classifier(ckpt, &tok, &empty, None, &cfg, 2), Err(AdaptError::EmptyData(_))));
    }

    #[test]
    fn incompatible_tokenizer_is_rejected() {
        let (tok, texts) = toy();
        let ckpt = init_model(&ModelConfig::tiny(tok.vocab_size() + 1), 0).unwrap();
        let mono = MonoCorpus::new("m", LanguageTag::pcm(), texts);
        assert!(matches!(
            cat_pretrain(ckpt, &tok, &mono, &MaskingConfig::default(), &fast(1), 0),
            Err(AdaptError::Incompatible(_))
        ));
    }
}
