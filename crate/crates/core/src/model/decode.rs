use serde::{Deserialize, Serialize};

use super::graph::{log_sum_exp, softmax_rows, Graph};
use super::transformer::NUM_CLASSES;
use super::{Checkpoint, ModelError};
use crate::tokenize::{is_special, BOS_ID, EOS_ID, UNK_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_size: usize,
    /// Maximum generated tokens, `<eos>` excluded.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { mode: DecodeMode::Greedy, beam_size: 4, max_len: 48 }
    }
}

/// Tokens the decoder may emit: ordinary tokens, `<unk>` and `<eos>`.
fn emittable(id: u32) -> bool {
    !is_special(id) || id == EOS_ID || id == UNK_ID
}

/// Translates `src_ids` (plain tokens) into the direction named by
/// `direction_tag`. The encoder sees `[tag] + src + [<eos>]`.
pub fn translate(ckpt: &Checkpoint, src_ids: &[u32], direction_tag: u32, cfg: &DecodeConfig) -> Result<Vec<u32>, ModelError> {
    let mc = ckpt.config();
    let mut src = Vec::with_capacity(src_ids.len() + 2);
    src.push(direction_tag);
    src.extend_from_slice(&src_ids[..src_ids.len().min(mc.max_len.saturating_sub(2))]);
    src.push(EOS_ID);
    if let Some(&id) = src.iter().find(|&&id| id as usize >= mc.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id, vocab: mc.vocab_size });
    }
    let limit = cfg.max_len.min(mc.max_len.saturating_sub(1));

    let net = ckpt.net();
    let mut g = Graph::new(ckpt.params());
    let src_pad = vec![false; src.len()];
    let memory = net.encode(&mut g, &src, &src_pad, None);

    let next_logprobs = |g: &mut Graph<'_>, prefix: &[u32]| -> Vec<f64> {
        let mut tgt = Vec::with_capacity(prefix.len() + 1);
        tgt.push(BOS_ID);
        tgt.extend_from_slice(prefix);
        let pad = vec![false; tgt.len()];
        let dec = net.decode(g, memory, &src_pad, &tgt, &pad, None);
        let logits = net.lm_logits(g, dec);
        let row = g.value(logits).row(tgt.len() - 1);
        let lse = log_sum_exp(row);
        row.iter().map(|v| v - lse).collect()
    };

    let beam = match cfg.mode {
        DecodeMode::Greedy => 1,
        DecodeMode::Beam => cfg.beam_size.max(1),
    };
    if cfg.mode == DecodeMode::Greedy {
        let mut out = Vec::new();
        while out.len() < limit {
            let lp = next_logprobs(&mut g, &out);
            let best = argmax_emittable(&lp);
            if best == EOS_ID {
                break;
            }
            out.push(best);
        }
        return Ok(out);
    }

    // Beam search; hypotheses ranked by summed log-probability, finished ones
    // by log-probability per generated token (eos included).
    let mut active: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for _ in 0..limit {
        let mut cands: Vec<(usize, u32, f64)> = Vec::new();
        for (h, (toks, score)) in active.iter().enumerate() {
            let lp = next_logprobs(&mut g, toks);
            for (id, v) in lp.iter().enumerate() {
                if emittable(id as u32) {
                    cands.push((h, id as u32, score + v));
                }
            }
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next = Vec::new();
        for (h, id, score) in cands.into_iter().take(beam) {
            let toks = &active[h].0;
            if id == EOS_ID {
                let len = (toks.len() + 1) as f64;
                finished.push((toks.clone(), score / len));
            } else {
                let mut t = toks.clone();
                t.push(id);
                next.push((t, score));
            }
        }
        active = next;
        if active.is_empty() || finished.len() >= beam {
            break;
        }
    }
    let best_finished = finished.into_iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    Ok(match best_finished {
        Some((t, _)) => t,
        None => active
            .into_iter()
            .map(|(t, s)| {
                let n = t.len().max(1) as f64;
                (t, s / n)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(t, _)| t)
            .unwrap_or_default(),
    })
}

fn argmax_emittable(lp: &[f64]) -> u32 {
    let mut best = EOS_ID;
    let mut best_v = f64::NEG_INFINITY;
    for (id, &v) in lp.iter().enumerate() {
        if emittable(id as u32) && v > best_v {
            best_v = v;
            best = id as u32;
        }
    }
    best
}

/// Class probabilities from mean-pooled encoder states. `ids` are the plain
/// tokens; `<eos>` is appended as in training.
pub fn classify(ckpt: &Checkpoint, ids: &[u32]) -> Result<[f64; NUM_CLASSES], ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mc = ckpt.config();
    let mut seq = ids[..ids.len().min(mc.max_len - 1)].to_vec();
    seq.push(EOS_ID);
    if let Some(&id) = seq.iter().find(|&&id| id as usize >= mc.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id, vocab: mc.vocab_size });
    }
    let net = ckpt.net();
    let mut g = Graph::new(ckpt.params());
    let pad = vec![false; seq.len()];
    let enc = net.encode(&mut g, &seq, &pad, None);
    let logits = net.class_logits(&mut g, enc, &pad);
    let p = softmax_rows(g.value(logits), None);
    let mut out = [0.0; NUM_CLASSES];
    out.copy_from_slice(p.row(0));
    Ok(out)
}

/// Index of the most probable class (lowest index on ties).
pub fn predict_class(probs: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::super::{init_model, ModelConfig};
    use super::*;
    use crate::tokenize::TO_PCM_ID;

    #[test]
    fn beam_of_one_equals_greedy() {
        for seed in 0..4 {
            let c = init_model(&ModelConfig::tiny(40), seed).unwrap();
            let greedy = translate(&c, &[10, 11, 12], TO_PCM_ID, &DecodeConfig { max_len: 8, ..Default::default() }).unwrap();
            let beam = translate(&c, &[10, 11, 12], TO_PCM_ID, &DecodeConfig { mode: DecodeMode::Beam, beam_size: 1, max_len: 8 }).unwrap();
            assert_eq!(greedy, beam);
        }
    }

    #[test]
    fn eos_first_gives_empty_output() {
        let mut c = init_model(&ModelConfig::tiny(40), 0).unwrap();
        let bias = c.params_mut().by_name_mut("out.bias").unwrap();
        bias.data_mut()[EOS_ID as usize] = 1e3;
        let out = translate(&c, &[10, 11], TO_PCM_ID, &DecodeConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn output_bounded_by_max_len() {
        let mut c = init_model(&ModelConfig::tiny(40), 0).unwrap();
        c.params_mut().by_name_mut("out.bias").unwrap().data_mut()[20] = 1e3;
        let out = translate(&c, &[10], TO_PCM_ID, &DecodeConfig { max_len: 5, ..Default::default() }).unwrap();
        assert_eq!(out, vec![20; 5]);
    }

    #[test]
    fn class_probabilities() {
        let mut c = init_model(&ModelConfig::tiny(40), 2).unwrap();
        let p = classify(&c, &[10, 11, 12]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        c.zero_class_head();
        let p = classify(&c, &[10, 11, 12]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(matches!(classify(&c, &[]), Err(ModelError::EmptyInput)));
    }
}
