//! Corpus BLEU, macro-F1 and experiment reports.

mod bleu;
mod f1;
mod report;

use thiserror::Error;

pub use bleu::{corpus_bleu, BleuScore, Smoothing};
pub use f1::{macro_f1, ConfusionMatrix};
pub use report::{
    build_report, curve_series, DataSizes, EvalReport, MetricName, ReportFormat, ReportRow, TOOLKIT_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("label {0} outside the 3-class set")]
    BadLabel(usize),
    #[error("BLEU order must be at least 1")]
    BadOrder,
}

/// BLEU over whitespace tokens of each line, case preserved.
pub fn bleu_on_text(hypotheses: &[String], references: &[String], smoothing: Smoothing) -> Result<BleuScore, EvalError> {
    let split = |v: &[String]| v.iter().map(|s| s.split_whitespace().map(str::to_string).collect()).collect::<Vec<Vec<String>>>();
    corpus_bleu(&split(hypotheses), &split(references), 4, smoothing)
}
