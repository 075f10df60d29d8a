use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::NUM_LABELS;

/// `counts[gold][predicted]`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_LABELS]; NUM_LABELS],
}

impl ConfusionMatrix {
    pub fn from_labels(predictions: &[usize], gold: &[usize]) -> Result<Self, EvalError> {
        if predictions.len() != gold.len() {
            return Err(EvalError::LengthMismatch { left: predictions.len(), right: gold.len() });
        }
        if gold.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut m = ConfusionMatrix::default();
        for (&p, &g) in predictions.iter().zip(gold) {
            if p >= NUM_LABELS || g >= NUM_LABELS {
                return Err(EvalError::BadLabel(p.max(g)));
            }
            m.counts[g][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Per-class F1; 0 when precision + recall is 0.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class] as f64;
        let predicted: usize = (0..NUM_LABELS).map(|g| self.counts[g][class]).sum();
        let actual: usize = self.counts[class].iter().sum();
        if tp == 0.0 {
            return 0.0;
        }
        let (p, r) = (tp / predicted as f64, tp / actual as f64);
        2.0 * p * r / (p + r)
    }

    /// Unweighted mean of per-class F1 over classes that occur in gold.
    pub fn macro_f1(&self) -> f64 {
        let present: Vec<usize> = (0..NUM_LABELS).filter(|&c| self.counts[c].iter().sum::<usize>() > 0).collect();
        present.iter().map(|&c| self.f1(c)).sum::<f64>() / present.len() as f64
    }
}

pub fn macro_f1(predictions: &[usize], gold: &[usize]) -> Result<f64, EvalError> {
    Ok(ConfusionMatrix::from_labels(predictions, gold)?.macro_f1())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let g = [0, 1, 2, 2, 1];
        assert_eq!(macro_f1(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn single_class_predictions() {
        let gold: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let pred = vec![0; 30];
        let m = ConfusionMatrix::from_labels(&pred, &gold).unwrap();
        assert_eq!([m.f1(0), m.f1(1), m.f1(2)], [0.5, 0.0, 0.0]);
        assert!((m.macro_f1() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn absent_gold_class_excluded() {
        // gold has no neutral; a stray neutral prediction costs recall on class 0 only
        let f = macro_f1(&[0, 2, 1], &[0, 0, 1]).unwrap();
        assert!((f - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(macro_f1(&[0], &[0, 1]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(macro_f1(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(macro_f1(&[3], &[0]), Err(EvalError::BadLabel(3))));
    }
}
