use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use super::options::*;
use super::{emit, Cli, Command, Global};
use crate::adapt::{
    back_translate, bidirectional_bt, cat_pretrain, derive_seed, finetune_classifier, finetune_translation, load_config,
    predict_probs, run_experiment, sha256_file, tat_train, translate_texts, Artifact, DataRegistry, Direction, RunManifest,
    StageConfig, StageOutcome, StageTiming,
};
use crate::corpus::{
    align_by_key, clean_and_filter, ingest_labeled, ingest_monolingual, ingest_parallel, merge, read_keyed_segments,
    split_and_subsample, write_labeled, write_monolingual, write_parallel_jsonl, LabeledCorpus, LabeledText, LanguageTag,
    MonoCorpus, ParallelCorpus, ParallelFormat, Sentiment, SplitSpec,
};
use crate::eval::{bleu_on_text, build_report, macro_f1, EvalReport, ReportFormat, TOOLKIT_VERSION};
use crate::model::{init_model, load_checkpoint, predict_class, save_checkpoint, Checkpoint, SHARED_VOCAB};
use crate::orthography::{augment_mono, augment_parallel, builtin_rules, read_rules};
use crate::synth::write_fixtures;
use crate::tokenize::{train_bpe_to_size, train_word_vocab, TokenizerKind, TokenizerSpec};

fn lang(s: &str) -> Result<LanguageTag, String> {
    LanguageTag::new(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LangPair {
    #[arg(long, default_value = "eng", value_parser = lang)]
    pub src_lang: LanguageTag,
    #[arg(long, default_value = "pcm", value_parser = lang)]
    pub tgt_lang: LanguageTag,
}

impl LangPair {
    fn tags(&self) -> (LanguageTag, LanguageTag) {
        (self.src_lang.clone(), self.tgt_lang.clone())
    }

    fn direction(&self) -> Result<Direction> {
        Ok(Direction::new(self.src_lang.clone(), self.tgt_lang.clone())?)
    }
}

/// Overrides for the stage section of an option file.
#[derive(Args, Debug, Clone, Serialize)]
pub struct StageFlags {
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    /// Dev evaluation interval.
    #[arg(long)]
    pub eval_every: Option<u64>,
}

impl StageFlags {
    fn apply(&self, s: &mut StageConfig) {
        if let Some(v) = self.steps {
            s.steps = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.lr {
            s.hyper.lr = v;
        }
        if let Some(v) = self.warmup_steps {
            s.hyper.warmup_steps = v;
        }
        if let Some(v) = self.eval_every {
            s.eval_every = v;
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Inferred from the extension when omitted (`.jsonl` or line-aligned stem).
    #[arg(long, value_enum)]
    pub format: Option<ParallelFormat>,
    #[command(flatten)]
    pub langs: LangPair,
    /// Read monolingual text in this language instead.
    #[arg(long, value_parser = lang, conflicts_with = "format")]
    pub mono: Option<LanguageTag>,
}

#[derive(Args, Debug, Serialize)]
pub struct AlignArgs {
    /// Source-language `key<TAB>text` file.
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long, default_value = "aligned")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CleanArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub max_ratio: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct MergeArgs {
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub langs: LangPair,
}

#[derive(Args, Debug, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Receives `train.jsonl`, `dev.jsonl` and `test.jsonl`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub langs: LangPair,
    /// Treat the input as monolingual text in this language.
    #[arg(long, value_parser = lang)]
    pub mono: Option<LanguageTag>,
    /// JSON rule table; the built-in rules otherwise.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Word,
    Bpe,
}

#[derive(Args, Debug, Serialize)]
pub struct TokenizeTrainArgs {
    /// Plain-text file, one sentence per line.
    #[arg(long = "text")]
    pub texts: Vec<PathBuf>,
    /// Parallel JSONL file; both sides are used.
    #[arg(long = "parallel")]
    pub parallel: Vec<PathBuf>,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Monolingual text files, concatenated in order.
    #[arg(long = "mono", required = true)]
    pub mono: Vec<PathBuf>,
    #[arg(long, default_value = "pcm", value_parser = lang)]
    pub lang: LanguageTag,
    /// Starting checkpoint; a fresh model from the option file otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub stage: StageFlags,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct BacktranslateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Text in the source language, translated forward.
    #[arg(long)]
    pub mono: PathBuf,
    /// Text in the target language, translated in reverse.
    #[arg(long)]
    pub mono_rev: Option<PathBuf>,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TatArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Parallel JSONL files (synthetic and real), concatenated.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub both_orientations: bool,
    #[command(flatten)]
    pub stage: StageFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Translation,
    Sentiment,
}

#[derive(Args, Debug, Serialize)]
pub struct FinetuneArgs {
    /// Starting checkpoint; a fresh `--preset` model otherwise.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Parallel JSONL for translation, labeled JSONL for sentiment.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[command(flatten)]
    pub langs: LangPair,
    /// Language of labeled sentiment data.
    #[arg(long, default_value = "pcm", value_parser = lang)]
    pub lang: LanguageTag,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub stage: StageFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TranslateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// One source sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub langs: LangPair,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    /// Printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// One sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Labeled JSONL; `label<TAB>text` lines on stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Add a probability column to stdout lines.
    #[arg(long)]
    pub probabilities: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long, requires = "reference", conflicts_with_all = ["pred", "gold"])]
    pub hyp: Option<PathBuf>,
    /// References, line-aligned with the hypotheses.
    #[arg(long = "ref", requires = "hyp")]
    pub reference: Option<PathBuf>,
    /// Predicted labels as labeled JSONL.
    #[arg(long, requires = "gold")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Add-k smoothing constant for BLEU orders 2 to 4.
    #[arg(long)]
    pub add_k: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExperimentArgs {
    /// Experiment grid (TOML). Data paths in it are relative to its directory.
    #[arg(long)]
    pub grid: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// `report.json` from a run directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FixturesArgs {
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
}

pub(super) fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest(a) => ingest(g, a),
        Command::Align(a) => align(g, a),
        Command::Clean(a) => clean(g, a),
        Command::Merge(a) => merge_cmd(g, a),
        Command::Split(a) => split(g, a),
        Command::Augment(a) => augment(g, a),
        Command::TokenizeTrain(a) => tokenize_train(g, a),
        Command::Pretrain(a) => pretrain(cli, a),
        Command::Backtranslate(a) => backtranslate(g, a),
        Command::Tat(a) => tat(cli, a),
        Command::Finetune(a) => finetune(cli, a),
        Command::Translate(a) => translate(g, a),
        Command::Classify(a) => classify(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::Experiment(a) => experiment(g, a),
        Command::Report(a) => report(g, a),
        Command::Fixtures(a) => fixtures(a),
    }
}

fn read_parallel(g: &Global, path: &Path, langs: &LangPair) -> Result<ParallelCorpus> {
    let path = g.input(path);
    let format = if path.extension().is_some_and(|e| e == "jsonl") { ParallelFormat::Jsonl } else { ParallelFormat::LineAligned };
    ingest_parallel(&path, format, langs.tags()).with_context(|| format!("reading {}", path.display()))
}

fn read_lines(g: &Global, path: &Path) -> Result<Vec<String>> {
    let path = g.input(path);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn read_mono(g: &Global, path: &Path, lang: &LanguageTag) -> Result<MonoCorpus> {
    let path = g.input(path);
    ingest_monolingual(&path, lang.clone()).with_context(|| format!("reading {}", path.display()))
}

fn load_tokenizer(g: &Global, dir: &Path) -> Result<TokenizerSpec> {
    let dir = g.input(dir);
    TokenizerSpec::load(&dir).with_context(|| format!("loading tokenizer from {}", dir.display()))
}

fn load_ckpt(g: &Global, path: &Path) -> Result<Checkpoint> {
    let path = g.input(path);
    load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Output directory of a training command, collecting what the manifest needs.
struct RunDir {
    dir: PathBuf,
    checksums: BTreeMap<String, String>,
    artifacts: Vec<Artifact>,
    timings: Vec<StageTiming>,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(RunDir { dir: dir.to_path_buf(), checksums: BTreeMap::new(), artifacts: Vec::new(), timings: Vec::new() })
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        if path.is_dir() {
            for entry in fs::read_dir(path)?.collect::<Result<Vec<_>, _>>()? {
                if entry.path().is_file() {
                    let name = entry.file_name().to_string_lossy().into_owned();
                    self.checksums.insert(format!("{key}/{name}"), sha256_file(&entry.path())?);
                }
            }
        } else {
            self.checksums.insert(key.to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    fn put(&mut self, rel: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(rel), text)?;
        self.record(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let sha256 = sha256_file(&self.dir.join(rel))?;
        self.artifacts.push(Artifact { path: rel.to_string(), sha256 });
        Ok(())
    }

    fn finish(self, cli: &Cli, options: &impl Serialize, ckpt: &Checkpoint) -> Result<()> {
        let manifest = RunManifest {
            toolkit_version: TOOLKIT_VERSION.into(),
            config: serde_json::json!({ "invocation": cli, "options": options }),
            seeds: vec![cli.global.seed()],
            corpus_checksums: self.checksums,
            checkpoints: BTreeMap::from([("model".to_string(), ckpt.content_hash())]),
            artifacts: self.artifacts,
            stage_timings: self.timings,
        };
        manifest.write_atomic(&self.dir)?;
        Ok(())
    }
}

/// Saves the checkpoint and training log and writes the manifest.
fn finish_stage(mut run: RunDir, cli: &Cli, options: &impl Serialize, out: StageOutcome, key: &str, t: Instant) -> Result<()> {
    run.timings.push(StageTiming { key: key.into(), seconds: t.elapsed().as_secs_f64() });
    save_checkpoint(&out.ckpt, &run.dir.join("model.ckpt"))?;
    run.record("model.ckpt")?;
    let mut log = serde_json::to_string_pretty(&out.log)?;
    log.push('\n');
    run.put("log.json", &log)?;
    let last = out.log.losses.last().copied().unwrap_or(f64::NAN);
    let best = out.log.best_dev().map_or("none".to_string(), |v| format!("{v:.4}"));
    emit(&[
        ("command", &key),
        ("steps", &out.log.losses.len()),
        ("final_loss", &format!("{last:.6}")),
        ("best_dev", &best),
        ("ckpt", &run.dir.join("model.ckpt").display()),
        ("hash", &out.ckpt.content_hash()),
    ]);
    run.finish(cli, options, &out.ckpt)
}

fn ingest(g: &Global, a: &IngestArgs) -> Result<()> {
    ensure_parent(&a.out)?;
    if let Some(l) = &a.mono {
        let c = read_mono(g, &a.input, l)?;
        write_monolingual(&c, &a.out)?;
        emit(&[("command", &"ingest"), ("sentences", &c.len()), ("lang", &l)]);
        return Ok(());
    }
    let path = g.input(&a.input);
    let format = a.format.unwrap_or(if path.extension().is_some_and(|e| e == "jsonl") {
        ParallelFormat::Jsonl
    } else {
        ParallelFormat::LineAligned
    });
    let c = ingest_parallel(&path, format, a.langs.tags()).with_context(|| format!("reading {}", path.display()))?;
    write_parallel_jsonl(&c, &a.out)?;
    emit(&[("command", &"ingest"), ("pairs", &c.len()), ("synthetic", &c.synthetic_count())]);
    Ok(())
}

fn align(g: &Global, a: &AlignArgs) -> Result<()> {
    let src = read_keyed_segments(&g.input(&a.src))?;
    let tgt = read_keyed_segments(&g.input(&a.tgt))?;
    let out = align_by_key(&src, &tgt, a.langs.tags(), &a.name)?;
    ensure_parent(&a.out)?;
    write_parallel_jsonl(&out.corpus, &a.out)?;
    emit(&[("command", &"align"), ("pairs", &out.corpus.len()), ("skipped", &out.skipped.len())]);
    Ok(())
}

fn clean(g: &Global, a: &CleanArgs) -> Result<()> {
    let mut cfg: CleanOptions = load_options(a.config.as_deref())?;
    cfg.max_len = a.max_len.unwrap_or(cfg.max_len);
    cfg.max_ratio = a.max_ratio.unwrap_or(cfg.max_ratio);
    let c = read_parallel(g, &a.input, &a.langs)?;
    let (kept, rep) = clean_and_filter(&c, &cfg);
    ensure_parent(&a.out)?;
    write_parallel_jsonl(&kept, &a.out)?;
    emit(&[
        ("command", &"clean"),
        ("kept", &rep.kept),
        ("dropped_empty", &rep.dropped_empty),
        ("dropped_length", &rep.dropped_length),
        ("dropped_ratio", &rep.dropped_ratio),
    ]);
    Ok(())
}

fn merge_cmd(g: &Global, a: &MergeArgs) -> Result<()> {
    let corpora = a.inputs.iter().map(|p| read_parallel(g, p, &a.langs)).collect::<Result<Vec<_>>>()?;
    let total: usize = corpora.iter().map(ParallelCorpus::len).sum();
    let merged = merge(&corpora.iter().collect::<Vec<_>>())?;
    ensure_parent(&a.out)?;
    write_parallel_jsonl(&merged, &a.out)?;
    emit(&[("command", &"merge"), ("pairs", &merged.len()), ("duplicates", &(total - merged.len()))]);
    Ok(())
}

fn split(g: &Global, a: &SplitArgs) -> Result<()> {
    let opts: SplitOptions = load_options(a.config.as_deref())?;
    let spec = SplitSpec { train_frac: opts.train_frac, dev_frac: opts.dev_frac, test_frac: opts.test_frac, seed: g.seed() };
    let fraction = a.fraction.unwrap_or(opts.fraction);
    let c = read_parallel(g, &a.input, &a.langs)?;
    let s = split_and_subsample(&c, &spec, fraction)?;
    fs::create_dir_all(&a.out_dir)?;
    for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        write_parallel_jsonl(part, &a.out_dir.join(format!("{name}.jsonl")))?;
    }
    emit(&[
        ("command", &"split"),
        ("train", &s.train.len()),
        ("dev", &s.dev.len()),
        ("test", &s.test.len()),
        ("synthetic", &s.train.synthetic_count()),
        ("seed", &g.seed()),
    ]);
    Ok(())
}

fn augment(g: &Global, a: &AugmentArgs) -> Result<()> {
    let mut cfg: AugmentOptions = load_options(a.config.as_deref())?;
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    cfg.rate = a.rate.unwrap_or(cfg.rate);
    let rules = match &a.rules {
        Some(p) => read_rules(&g.input(p))?,
        None => builtin_rules(),
    };
    ensure_parent(&a.out)?;
    let (before, after) = if let Some(l) = &a.mono {
        let c = read_mono(g, &a.input, l)?;
        let out = augment_mono(&c, &rules, &cfg)?;
        write_monolingual(&out, &a.out)?;
        (c.len(), out.len())
    } else {
        let c = read_parallel(g, &a.input, &a.langs)?;
        let out = augment_parallel(&c, &rules, &cfg)?;
        write_parallel_jsonl(&out, &a.out)?;
        (c.len(), out.len())
    };
    emit(&[("command", &"augment"), ("before", &before), ("after", &after), ("seed", &cfg.seed)]);
    Ok(())
}

fn tokenize_train(g: &Global, a: &TokenizeTrainArgs) -> Result<()> {
    let mut cfg: TokenizeOptions = load_options(a.config.as_deref())?;
    if let Some(k) = a.kind {
        cfg.kind = match k {
            KindArg::Word => TokenizerKind::Word,
            KindArg::Bpe => TokenizerKind::Bpe,
        };
    }
    let size = a.vocab_size.or(cfg.vocab_size).unwrap_or(SHARED_VOCAB);
    let mut texts = Vec::new();
    for p in &a.texts {
        texts.extend(read_lines(g, p)?.into_iter().filter(|l| !l.trim().is_empty()));
    }
    for p in &a.parallel {
        for pair in read_parallel(g, p, &a.langs)?.pairs {
            texts.push(pair.src);
            texts.push(pair.tgt);
        }
    }
    if texts.is_empty() {
        bail!("no training text: pass --text or --parallel");
    }
    let tok = match cfg.kind {
        TokenizerKind::Word => TokenizerSpec::word(train_word_vocab(texts.iter().map(String::as_str), size)?),
        TokenizerKind::Bpe => {
            let (merges, vocab) = train_bpe_to_size(texts.iter().map(String::as_str), size)?;
            TokenizerSpec::bpe(merges, vocab)
        }
    };
    tok.save(&a.out)?;
    let merges = tok.merges().map_or(0, |m| m.len());
    emit(&[("command", &"tokenize-train"), ("vocab", &tok.vocab_size()), ("merges", &merges), ("sentences", &texts.len())]);
    Ok(())
}

fn fresh_model(spec: &crate::adapt::ModelSpec, tok: &TokenizerSpec, seed: u64) -> Result<Checkpoint> {
    let mut cfg = spec.resolve()?;
    cfg.vocab_size = tok.vocab_size();
    Ok(init_model(&cfg, derive_seed(seed, "init"))?)
}

fn pretrain(cli: &Cli, a: &PretrainArgs) -> Result<()> {
    let g = &cli.global;
    let mut opts: PretrainOptions = load_options(a.config.as_deref())?;
    a.stage.apply(&mut opts.stage);
    if let Some(p) = &a.preset {
        opts.model.preset = p.clone();
    }
    if let Some(r) = a.mask_rate {
        opts.masking.mask_rate = r;
    }
    let mut run = RunDir::create(&a.out)?;
    let tok = load_tokenizer(g, &a.tokenizer)?;
    run.input("tokenizer", &g.input(&a.tokenizer))?;
    let mut sentences = Vec::new();
    for (i, p) in a.mono.iter().enumerate() {
        sentences.extend(read_mono(g, p, &a.lang)?.sentences);
        run.input(&format!("mono/{i}"), &g.input(p))?;
    }
    let mono = MonoCorpus::new("mono", a.lang.clone(), sentences);
    let ckpt = match &a.init {
        Some(p) => {
            run.input("init", &g.input(p))?;
            load_ckpt(g, p)?
        }
        None => fresh_model(&opts.model, &tok, g.seed())?,
    };
    let t = Instant::now();
    let out = cat_pretrain(ckpt, &tok, &mono, &opts.masking, &opts.stage, derive_seed(g.seed(), "pretrain"))?;
    finish_stage(run, cli, &opts, out, "pretrain", t)
}

fn backtranslate(g: &Global, a: &BacktranslateArgs) -> Result<()> {
    let mut opts: BacktranslateOptions = load_options(a.config.as_deref())?;
    if let Some(b) = a.beam_size {
        opts.decode.beam_size = b;
        opts.decode.mode = crate::model::DecodeMode::Beam;
    }
    let ckpt = load_ckpt(g, &a.ckpt)?;
    let tok = load_tokenizer(g, &a.tokenizer)?;
    let fwd = a.langs.direction()?;
    let mono = read_mono(g, &a.mono, &a.langs.src_lang)?;
    let out = match &a.mono_rev {
        Some(p) => {
            let rev = read_mono(g, p, &a.langs.tgt_lang)?;
            bidirectional_bt(&ckpt, &tok, &mono, &rev, &fwd, &fwd.reversed(), &opts.decode)?
        }
        None => back_translate(&ckpt, &tok, &mono, &fwd, &opts.decode)?,
    };
    ensure_parent(&a.out)?;
    write_parallel_jsonl(&out.corpus, &a.out)?;
    let r = &out.report;
    emit(&[
        ("command", &"backtranslate"),
        ("pairs", &out.corpus.len()),
        ("forward", &r.forward),
        ("reverse", &r.reverse),
        ("duplicates", &r.duplicates),
        ("empty_outputs", &r.empty_outputs),
    ]);
    Ok(())
}

fn tat(cli: &Cli, a: &TatArgs) -> Result<()> {
    let g = &cli.global;
    let mut opts: TatOptions = load_options(a.config.as_deref())?;
    a.stage.apply(&mut opts.stage);
    opts.both_orientations |= a.both_orientations;
    let mut run = RunDir::create(&a.out)?;
    let ckpt = load_ckpt(g, &a.ckpt)?;
    run.input("init", &g.input(&a.ckpt))?;
    let tok = load_tokenizer(g, &a.tokenizer)?;
    run.input("tokenizer", &g.input(&a.tokenizer))?;
    let mut corpora = Vec::new();
    for (i, p) in a.data.iter().enumerate() {
        corpora.push(read_parallel(g, p, &a.langs)?);
        run.input(&format!("data/{i}"), &g.input(p))?;
    }
    let mut data = ParallelCorpus::new("tat", a.langs.tags());
    for c in corpora {
        data.pairs.extend(c.pairs);
    }
    let t = Instant::now();
    let out = tat_train(ckpt, &tok, &data, opts.both_orientations, &opts.stage, derive_seed(g.seed(), "tat"))?;
    finish_stage(run, cli, &opts, out, "tat", t)
}

fn finetune(cli: &Cli, a: &FinetuneArgs) -> Result<()> {
    let g = &cli.global;
    let mut opts: FinetuneOptions = load_options(a.config.as_deref())?;
    a.stage.apply(&mut opts.stage);
    let mut run = RunDir::create(&a.out)?;
    let tok = load_tokenizer(g, &a.tokenizer)?;
    run.input("tokenizer", &g.input(&a.tokenizer))?;
    let ckpt = match &a.ckpt {
        Some(p) => {
            run.input("init", &g.input(p))?;
            load_ckpt(g, p)?
        }
        None => {
            let spec = crate::adapt::ModelSpec { preset: a.preset.clone(), ..Default::default() };
            fresh_model(&spec, &tok, g.seed())?
        }
    };
    run.input("train", &g.input(&a.train))?;
    if let Some(d) = &a.dev {
        run.input("dev", &g.input(d))?;
    }
    let seed = derive_seed(g.seed(), "finetune");
    let t = Instant::now();
    let out = match a.task {
        Task::Translation => {
            let train = read_parallel(g, &a.train, &a.langs)?;
            let dev = a.dev.as_ref().map(|d| read_parallel(g, d, &a.langs)).transpose()?;
            finetune_translation(ckpt, &tok, &train, dev.as_ref(), &opts.decode, opts.bleu_smoothing, &opts.stage, seed)?
        }
        Task::Sentiment => {
            let read = |p: &Path| -> Result<LabeledCorpus> { Ok(ingest_labeled(&g.input(p), a.lang.clone())?) };
            let train = read(&a.train)?;
            let dev = a.dev.as_deref().map(read).transpose()?;
            finetune_classifier(ckpt, &tok, &train, dev.as_ref(), &opts.stage, seed)?
        }
    };
    finish_stage(run, cli, &opts, out, "finetune", t)
}

fn translate(g: &Global, a: &TranslateArgs) -> Result<()> {
    let mut opts: TranslateOptions = load_options(a.config.as_deref())?;
    if let Some(b) = a.beam_size {
        opts.decode.beam_size = b;
        opts.decode.mode = crate::model::DecodeMode::Beam;
    }
    let ckpt = load_ckpt(g, &a.ckpt)?;
    let tok = load_tokenizer(g, &a.tokenizer)?;
    let texts = read_lines(g, &a.input)?;
    let out = translate_texts(&ckpt, &tok, &texts, &a.langs.direction()?, &opts.decode)?;
    let mut body = out.join("\n");
    if !out.is_empty() {
        body.push('\n');
    }
    match &a.out {
        Some(p) => {
            write_text(p, &body)?;
            emit(&[("command", &"translate"), ("sentences", &out.len())]);
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn classify(g: &Global, a: &ClassifyArgs) -> Result<()> {
    let mut opts: ClassifyOptions = load_options(a.config.as_deref())?;
    opts.probabilities |= a.probabilities;
    let ckpt = load_ckpt(g, &a.ckpt)?;
    let tok = load_tokenizer(g, &a.tokenizer)?;
    let texts: Vec<String> = read_lines(g, &a.input)?.into_iter().filter(|l| !l.trim().is_empty()).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let probs = predict_probs(&ckpt, &tok, &refs)?;
    let labels: Vec<usize> = probs.iter().map(predict_class).collect();
    let items: Vec<LabeledText> = texts
        .iter()
        .zip(&labels)
        .map(|(t, &l)| LabeledText { text: t.clone(), label: Sentiment::from_index(l).expect("class index in range") })
        .collect();
    match &a.out {
        Some(p) => {
            ensure_parent(p)?;
            let c = LabeledCorpus { name: "predictions".into(), lang: LanguageTag::pcm(), items };
            write_labeled(&c, p)?;
            let count = |s: Sentiment| labels.iter().filter(|&&l| l == s.index()).count();
            emit(&[
                ("command", &"classify"),
                ("sentences", &labels.len()),
                ("positive", &count(Sentiment::Positive)),
                ("negative", &count(Sentiment::Negative)),
                ("neutral", &count(Sentiment::Neutral)),
            ]);
        }
        None => {
            for (it, p) in items.iter().zip(&probs) {
                if opts.probabilities {
                    let cols: Vec<String> = Sentiment::ALL.iter().map(|s| format!("{}={:.4}", s.as_str(), p[s.index()])).collect();
                    println!("{}\t{}\t{}", it.label.as_str(), cols.join(" "), it.text);
                } else {
                    println!("{}\t{}", it.label.as_str(), it.text);
                }
            }
        }
    }
    Ok(())
}

fn evaluate(g: &Global, a: &EvaluateArgs) -> Result<()> {
    let mut opts: EvaluateOptions = load_options(a.config.as_deref())?;
    if let Some(k) = a.add_k {
        opts.bleu_smoothing = crate::eval::Smoothing::AddK(k);
    }
    if let (Some(h), Some(r)) = (&a.hyp, &a.reference) {
        let hyps = read_lines(g, h)?;
        let refs = read_lines(g, r)?;
        let s = bleu_on_text(&hyps, &refs, opts.bleu_smoothing)?;
        let p: Vec<String> = s.precisions.iter().map(|x| format!("{x:.4}")).collect();
        emit(&[
            ("metric", &"bleu"),
            ("bleu", &format!("{:.1}", s.score)),
            ("precisions", &p.join(",")),
            ("bp", &format!("{:.4}", s.brevity_penalty)),
            ("hyp_len", &s.hyp_len),
            ("ref_len", &s.ref_len),
        ]);
        return Ok(());
    }
    if let (Some(p), Some(gold)) = (&a.pred, &a.gold) {
        let pred = ingest_labeled(&g.input(p), LanguageTag::pcm())?;
        let gold = ingest_labeled(&g.input(gold), LanguageTag::pcm())?;
        let idx = |c: &LabeledCorpus| c.items.iter().map(|i| i.label.index()).collect::<Vec<_>>();
        let f1 = macro_f1(&idx(&pred), &idx(&gold))?;
        emit(&[("metric", &"f1"), ("f1", &format!("{f1:.4}")), ("n", &gold.len())]);
        return Ok(());
    }
    bail!("pass --hyp and --ref, or --pred and --gold")
}

fn experiment(g: &Global, a: &ExperimentArgs) -> Result<()> {
    let grid = g.input(&a.grid);
    let mut cfg = load_config(&grid)?;
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
    }
    let base = grid.parent().map(Path::to_path_buf).unwrap_or_default();
    let reg = DataRegistry::load(&cfg.data, &base)?;
    let t = Instant::now();
    let out = run_experiment(&cfg, &reg)?;
    out.write(&cfg, &reg.checksums, &a.out)?;
    let mut failed = 0;
    for r in &out.report.rows {
        let value = r.value.map_or("none".to_string(), |v| format!("{v:.4}"));
        let dir = r.direction.clone().unwrap_or_else(|| "-".into());
        emit(&[
            ("event", &"row"),
            ("cell", &r.cell_id),
            ("variant", &r.variant),
            ("fraction", &r.fraction),
            ("direction", &dir),
            ("seed", &r.seed),
            ("metric", &serde_json::to_value(r.metric)?.as_str().unwrap_or("?")),
            ("value", &value),
        ]);
        if let Some(e) = &r.error {
            failed += 1;
            log::error!("event=cell_failed cell={} seed={} error={e:?}", r.cell_id, r.seed);
        }
    }
    emit(&[
        ("command", &"experiment"),
        ("rows", &out.report.rows.len()),
        ("failed", &failed),
        ("seconds", &format!("{:.1}", t.elapsed().as_secs_f64())),
        ("out", &a.out.display()),
    ]);
    if failed > 0 {
        bail!("{failed} report rows failed; see {}", a.out.join("report.json").display());
    }
    Ok(())
}

fn report(g: &Global, a: &ReportArgs) -> Result<()> {
    let path = g.input(&a.input);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let rep = EvalReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let out = build_report(&rep, a.format);
    match &a.out {
        Some(p) => {
            write_text(p, &out)?;
            emit(&[("command", &"report"), ("rows", &rep.rows.len()), ("out", &p.display())]);
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn fixtures(a: &FixturesArgs) -> Result<()> {
    let files = write_fixtures(&a.out)?;
    emit(&[("command", &"fixtures"), ("files", &files.len()), ("out", &a.out.display())]);
    Ok(())
}
