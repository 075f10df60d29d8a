use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "k")]
#[derive(Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds `k` to matches and totals for orders 2 and up.
    AddK(f64),
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In [0, 100].
    pub score: f64,
    /// Per-order precisions in [0, 1]; NaN-free, orders the hypotheses never
    /// reach are reported as 1 and left out of the mean.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Hash + Eq>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with clipped n-gram precisions, uniform weights and the
/// standard brevity penalty.
///
/// An order for which the hypotheses contain no n-grams at all is left out of
/// the geometric mean (it has no precision to measure). Without this, any
/// corpus of sentences shorter than `max_n` would score 0 against itself.
pub fn corpus_bleu<T: Hash + Eq>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch { left: hypotheses.len(), right: references.len() });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Empty);
    }
    if max_n == 0 {
        return Err(EvalError::BadOrder);
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    let mut precisions = vec![1.0; max_n];
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    let mut zero = false;
    for n in 0..max_n {
        if totals[n] == 0 {
            continue;
        }
        let (m, t) = match smoothing {
            Smoothing::AddK(k) if n > 0 => (matches[n] as f64 + k, totals[n] as f64 + k),
            _ => (matches[n] as f64, totals[n] as f64),
        };
        precisions[n] = m / t;
        orders += 1;
        if m == 0.0 {
            zero = true;
        } else {
            log_sum += (m / t).ln();
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if zero || orders == 0 {
        0.0
    } else {
        (brevity_penalty * (log_sum / orders as f64).exp() * 100.0).min(100.0)
    };
    Ok(BleuScore { score, precisions, brevity_penalty, hyp_len, ref_len })
}
