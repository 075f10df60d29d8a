//! Command-line front end. [`run`] parses arguments, dispatches one
//! subcommand and returns the process exit code: 0 on success, 1 on a failed
//! run, 2 on a usage error.
//!
//! Results go to stdout as `key=value` lines; progress logs go to stderr.

mod commands;
mod options;

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use options::{
    load_options, AugmentOptions, BacktranslateOptions, ClassifyOptions, CleanOptions, EvaluateOptions, FinetuneOptions,
    PretrainOptions, SplitOptions, TatOptions, TokenizeOptions, TranslateOptions,
};

/// Environment variable naming the directory that relative input paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "PIDGIN_ADAPT_DATA";

#[derive(Parser, Debug, Serialize)]
#[command(name = "pidgin-adapt", version, about = "Cross-lingual adaptive training for English / Nigerian Pidgin")]
#[command(arg_required_else_help = true, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Root seed; every random choice in the run is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for relative input paths.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `path` as given if absolute or no data directory is set, otherwise
    /// joined onto the data directory.
    pub fn input(&self, path: &Path) -> PathBuf {
        match &self.data_dir {
            Some(d) if path.is_relative() => d.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Read a parallel or monolingual corpus and write normalized JSONL.
    Ingest(commands::IngestArgs),
    /// Pair two keyed documents (`key<TAB>text` per line) into a parallel corpus.
    Align(commands::AlignArgs),
    /// Drop empty, overlong and badly length-matched pairs.
    Clean(commands::CleanArgs),
    /// Concatenate parallel corpora and remove duplicate pairs.
    Merge(commands::MergeArgs),
    /// Split a corpus into train/dev/test and subsample train.
    Split(commands::SplitArgs),
    /// Add orthographic variants of Pidgin sentences.
    Augment(commands::AugmentArgs),
    /// Train a word or BPE tokenizer.
    TokenizeTrain(commands::TokenizeTrainArgs),
    /// Masked-LM pretraining on monolingual text (CaT stage).
    Pretrain(commands::PretrainArgs),
    /// Translate monolingual text into synthetic parallel pairs.
    Backtranslate(commands::BacktranslateArgs),
    /// Train on back-translated pairs (TaT stage).
    Tat(commands::TatArgs),
    /// Fine-tune for translation or sentiment classification.
    Finetune(commands::FinetuneArgs),
    /// Translate one sentence per line.
    Translate(commands::TranslateArgs),
    /// Predict a sentiment label for each line.
    Classify(commands::ClassifyArgs),
    /// Score hypotheses with BLEU or predicted labels with macro F1.
    Evaluate(commands::EvaluateArgs),
    /// Run an experiment grid and write a run directory.
    Experiment(commands::ExperimentArgs),
    /// Render a saved report as JSON, markdown or CSV.
    Report(commands::ReportArgs),
    /// Write the synthetic fixture corpora and example grids.
    Fixtures(commands::FixturesArgs),
}

/// Prints one `key=value` line. Values containing whitespace, quotes or `=`
/// are quoted.
pub fn emit(pairs: &[(&str, &dyn Display)]) {
    let line: Vec<String> = pairs
        .iter()
        .map(|(k, v)| {
            let v = v.to_string();
            if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '"' || c == '=') {
                format!("{k}={v:?}")
            } else {
                format!("{k}={v}")
            }
        })
        .collect();
    println!("{}", line.join(" "));
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
