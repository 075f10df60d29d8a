use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bt::{bidirectional_bt, BtReport};
use super::masking::MaskingConfig;
use super::plan::{StageKind, TrainPlan};
use super::train::{bleu_for, cat_pretrain, f1_for, finetune_classifier, finetune_translation, tat_train};
use super::{derive_seed, AdaptError, Direction};
use crate::corpus::{
    ingest_labeled, ingest_monolingual, ingest_parallel, split_and_subsample, LabeledCorpus, LanguageTag, MonoCorpus,
    ParallelCorpus, ParallelFormat, SplitSpec, Splits,
};
use crate::eval::{build_report, curve_series, DataSizes, EvalReport, MetricName, ReportFormat, ReportRow, Smoothing, TOOLKIT_VERSION};
use crate::model::{init_model, save_checkpoint, Checkpoint, DecodeConfig, ModelConfig};
use crate::tokenize::{train_bpe_to_size, train_word_vocab, TokenizerKind, TokenizerSpec};

/// A named preset with optional per-field overrides. The vocabulary size
/// always comes from the trained tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_preset")]
    pub preset: String,
    pub enc_layers: Option<usize>,
    pub dec_layers: Option<usize>,
    pub heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout: Option<f64>,
}

fn default_preset() -> String {
    "tiny".into()
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            preset: default_preset(),
            enc_layers: None,
            dec_layers: None,
            heads: None,
            d_model: None,
            d_ff: None,
            max_len: None,
            dropout: None,
        }
    }
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<ModelConfig, AdaptError> {
        let mut c = ModelConfig::preset(&self.preset).ok_or_else(|| AdaptError::Unknown { kind: "model preset", name: self.preset.clone() })?;
        let before = c.clone();
        c.enc_layers = self.enc_layers.unwrap_or(c.enc_layers);
        c.dec_layers = self.dec_layers.unwrap_or(c.dec_layers);
        c.heads = self.heads.unwrap_or(c.heads);
        c.d_model = self.d_model.unwrap_or(c.d_model);
        c.d_ff = self.d_ff.unwrap_or(c.d_ff);
        c.max_len = self.max_len.unwrap_or(c.max_len);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        if c != before {
            c.preset_name = Some(format!("{}-custom", self.preset));
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    /// Target size; defaults to the model preset's vocabulary.
    pub vocab_size: Option<usize>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { kind: TokenizerKind::Word, vocab_size: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelFile {
    pub path: PathBuf,
    /// Inferred from the extension when absent: `.jsonl` or line-aligned.
    pub format: Option<ParallelFormat>,
    #[serde(default = "eng")]
    pub src_lang: LanguageTag,
    #[serde(default = "pcm")]
    pub tgt_lang: LanguageTag,
}

fn eng() -> LanguageTag {
    LanguageTag::eng()
}

fn pcm() -> LanguageTag {
    LanguageTag::pcm()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextFile {
    pub path: PathBuf,
    pub lang: LanguageTag,
}

/// Corpus files by name; relative paths resolve against the data directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    #[serde(default)]
    pub parallel: BTreeMap<String, ParallelFile>,
    #[serde(default)]
    pub mono: BTreeMap<String, TextFile>,
    #[serde(default)]
    pub labeled: BTreeMap<String, TextFile>,
}

/// How a cell's train/dev/test data is assembled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SettingSpec {
    /// Dev and test come from the first corpus; the rest only add training pairs.
    Translation {
        corpora: Vec<String>,
        #[serde(default)]
        split: SplitSpec,
    },
    Sentiment {
        train: String,
        dev: Option<String>,
        test: String,
        #[serde(default)]
        subsample_seed: u64,
    },
}

/// A row group of the grid: one plan on one data setting at each fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub variant: String,
    pub plan: String,
    pub setting: String,
    #[serde(default = "full")]
    pub fractions: Vec<f64>,
}

fn full() -> Vec<f64> {
    vec![1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Report timestamp; the current time when absent.
    pub created: Option<String>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub bleu_smoothing: Smoothing,
    #[serde(default)]
    pub masking: MaskingConfig,
    #[serde(default)]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub data: DataFiles,
    #[serde(default)]
    pub settings: BTreeMap<String, SettingSpec>,
    #[serde(default)]
    pub plans: BTreeMap<String, TrainPlan>,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, AdaptError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| AdaptError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        self.model.resolve()?;
        self.masking.validate()?;
        for (name, plan) in &self.plans {
            plan.validate().map_err(|e| AdaptError::InvalidPlan(format!("{name}: {e}")))?;
            for st in &plan.stages {
                if let Some(g) = &st.generator {
                    if !self.plans.contains_key(g) {
                        return Err(AdaptError::Unknown { kind: "generator plan", name: g.clone() });
                    }
                }
                for d in &st.data {
                    if !self.data.mono.contains_key(d) {
                        return Err(AdaptError::Unknown { kind: "monolingual corpus", name: d.clone() });
                    }
                }
            }
        }
        for (name, s) in &self.settings {
            let (kind, refs): (&str, Vec<&String>) = match s {
                SettingSpec::Translation { corpora, split } => {
                    split.validate()?;
                    if corpora.is_empty() {
                        return Err(AdaptError::Config(format!("setting {name} lists no corpora")));
                    }
                    ("parallel corpus", corpora.iter().collect())
                }
                SettingSpec::Sentiment { train, dev, test, .. } => {
                    ("labeled corpus", [Some(train), dev.as_ref(), Some(test)].into_iter().flatten().collect())
                }
            };
            for r in refs {
                let known = if kind == "parallel corpus" { self.data.parallel.contains_key(r) } else { self.data.labeled.contains_key(r) };
                if !known {
                    return Err(AdaptError::Unknown { kind, name: r.clone() });
                }
            }
        }
        for c in &self.cells {
            if !self.plans.contains_key(&c.plan) {
                return Err(AdaptError::Unknown { kind: "plan", name: c.plan.clone() });
            }
            if !self.settings.contains_key(&c.setting) {
                return Err(AdaptError::Unknown { kind: "data setting", name: c.setting.clone() });
            }
            if let Some(f) = c.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return Err(AdaptError::Config(format!("cell {}: fraction {f} outside (0, 1]", c.variant)));
            }
        }
        if self.seeds.is_empty() && !self.cells.is_empty() {
            return Err(AdaptError::Config("seeds must not be empty".into()));
        }
        Ok(())
    }
}

/// Reads and validates an experiment config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, AdaptError> {
    let text = fs::read_to_string(path).map_err(|source| AdaptError::Io { path: path.into(), source })?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        AdaptError::Config(m) => AdaptError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loaded corpora by name, with SHA-256 checksums of their source files.
#[derive(Clone, Debug, Default)]
pub struct DataRegistry {
    pub parallel: BTreeMap<String, ParallelCorpus>,
    pub mono: BTreeMap<String, MonoCorpus>,
    pub labeled: BTreeMap<String, LabeledCorpus>,
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, AdaptError> {
    let bytes = fs::read(path).map_err(|source| AdaptError::Io { path: path.into(), source })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl DataRegistry {
    pub fn load(files: &DataFiles, base: &Path) -> Result<Self, AdaptError> {
        let mut reg = DataRegistry::default();
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        for (name, f) in &files.parallel {
            let path = at(&f.path);
            let format = f.format.unwrap_or(if path.extension().is_some_and(|e| e == "jsonl") {
                ParallelFormat::Jsonl
            } else {
                ParallelFormat::LineAligned
            });
            let mut c = ingest_parallel(&path, format, (f.src_lang.clone(), f.tgt_lang.clone()))?;
            c.name = name.clone();
            if format == ParallelFormat::Jsonl {
                reg.checksums.insert(format!("parallel/{name}"), sha256_file(&path)?);
            } else {
                for lang in [&f.src_lang, &f.tgt_lang] {
                    let side = path.with_extension(lang.as_str());
                    let side = if side.exists() { side } else { PathBuf::from(format!("{}.{}", path.display(), lang.as_str())) };
                    if side.exists() {
                        reg.checksums.insert(format!("parallel/{name}.{}", lang.as_str()), sha256_file(&side)?);
                    }
                }
            }
            reg.parallel.insert(name.clone(), c);
        }
        for (name, f) in &files.mono {
            let path = at(&f.path);
            let mut c = ingest_monolingual(&path, f.lang.clone())?;
            c.name = name.clone();
            reg.checksums.insert(format!("mono/{name}"), sha256_file(&path)?);
            reg.mono.insert(name.clone(), c);
        }
        for (name, f) in &files.labeled {
            let path = at(&f.path);
            let mut c = ingest_labeled(&path, f.lang.clone())?;
            c.name = name.clone();
            reg.checksums.insert(format!("labeled/{name}"), sha256_file(&path)?);
            reg.labeled.insert(name.clone(), c);
        }
        Ok(reg)
    }

    /// Every sentence in the registry, in a fixed order.
    pub fn all_texts(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for c in self.parallel.values() {
            for p in &c.pairs {
                out.push(p.src.as_str());
                out.push(p.tgt.as_str());
            }
        }
        for c in self.mono.values() {
            out.extend(c.sentences.iter().map(String::as_str));
        }
        for c in self.labeled.values() {
            out.extend(c.items.iter().map(|i| i.text.as_str()));
        }
        out
    }

    /// One tokenizer shared by every cell of a run.
    pub fn train_tokenizer(&self, cfg: &TokenizerConfig, default_size: usize) -> Result<TokenizerSpec, AdaptError> {
        let size = cfg.vocab_size.unwrap_or(default_size);
        let texts = self.all_texts();
        Ok(match cfg.kind {
            TokenizerKind::Word => TokenizerSpec::word(train_word_vocab(texts.iter().copied(), size)?),
            TokenizerKind::Bpe => {
                let (merges, vocab) = train_bpe_to_size(texts.iter().copied(), size)?;
                TokenizerSpec::bpe(merges, vocab)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub key: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-execute a run and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub corpus_checksums: BTreeMap<String, String>,
    /// Content hash of each cell's final checkpoint.
    pub checkpoints: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub stage_timings: Vec<StageTiming>,
}

impl RunManifest {
    /// Writes `dir/manifest.json` through a temporary file and a rename.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf, AdaptError> {
        let tmp = dir.join("manifest.json.tmp");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(|source| AdaptError::Io { path: tmp.clone(), source })?;
        let fin = dir.join("manifest.json");
        fs::rename(&tmp, &fin).map_err(|source| AdaptError::Io { path: fin.clone(), source })?;
        Ok(fin)
    }
}

pub struct ExperimentOutput {
    pub report: EvalReport,
    pub tokenizer: Option<TokenizerSpec>,
    /// Final checkpoint of each successful (cell, fraction, seed).
    pub checkpoints: BTreeMap<String, Checkpoint>,
    pub bt_reports: BTreeMap<String, BtReport>,
    pub timings: Vec<StageTiming>,
}

impl ExperimentOutput {
    /// Writes the report in every format, curve series, checkpoints when
    /// requested, and finally the manifest (via a temporary file and rename).
    pub fn write(&self, cfg: &ExperimentConfig, checksums: &BTreeMap<String, String>, dir: &Path) -> Result<RunManifest, AdaptError> {
        fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AdaptError + '_ {
            move |source| AdaptError::Io { path: path.to_path_buf(), source }
        }
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut artifacts = Vec::new();
        let mut put = |rel: String, bytes: &[u8]| -> Result<(), AdaptError> {
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io(parent))?;
            }
            fs::write(&path, bytes).map_err(io(&path))?;
            artifacts.push(Artifact { path: rel, sha256: hex::encode(Sha256::digest(bytes)) });
            Ok(())
        };
        put("report.json".into(), build_report(&self.report, ReportFormat::Json).as_bytes())?;
        put("report.md".into(), build_report(&self.report, ReportFormat::Markdown).as_bytes())?;
        for (name, series) in curve_series(&self.report) {
            put(format!("curves/{name}.csv"), series.as_bytes())?;
        }
        if let Some(tok) = &self.tokenizer {
            let tdir = dir.join("tokenizer");
            tok.save(&tdir)?;
        }
        if cfg.save_checkpoints {
            for (key, ckpt) in &self.checkpoints {
                let rel = format!("checkpoints/{key}.ckpt");
                let path = dir.join(&rel);
                fs::create_dir_all(path.parent().expect("has parent")).map_err(io(dir))?;
                save_checkpoint(ckpt, &path)?;
                artifacts.push(Artifact { path: rel, sha256: sha256_file(&path)? });
            }
        }
        let manifest = RunManifest {
            toolkit_version: TOOLKIT_VERSION.into(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            seeds: cfg.seeds.clone(),
            corpus_checksums: checksums.clone(),
            checkpoints: self.checkpoints.iter().map(|(k, c)| (k.clone(), c.content_hash())).collect(),
            artifacts,
            stage_timings: self.timings.clone(),
        };
        manifest.write_atomic(dir)?;
        Ok(manifest)
    }
}

enum SettingData {
    Translation(Splits),
    Sentiment { train: LabeledCorpus, dev: Option<LabeledCorpus>, test: LabeledCorpus },
}

impl SettingData {
    fn sizes(&self) -> DataSizes {
        match self {
            SettingData::Translation(s) => DataSizes {
                train: s.train.len(),
                dev: s.dev.len(),
                test: s.test.len(),
                synthetic: s.train.synthetic_count(),
            },
            SettingData::Sentiment { train, dev, test } => DataSizes {
                train: train.len(),
                dev: dev.as_ref().map_or(0, LabeledCorpus::len),
                test: test.len(),
                synthetic: 0,
            },
        }
    }
}

#[derive(Clone)]
struct Trained {
    ckpt: Checkpoint,
    synthetic: usize,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    reg: &'a DataRegistry,
    tok: &'a TokenizerSpec,
    model: ModelConfig,
    data: HashMap<(String, u64), std::rc::Rc<SettingData>>,
    cache: HashMap<String, Trained>,
    bt_reports: BTreeMap<String, BtReport>,
    timings: Vec<StageTiming>,
}

impl<'a> Runner<'a> {
    fn setting(&mut self, name: &str, fraction: f64) -> Result<std::rc::Rc<SettingData>, AdaptError> {
        let key = (name.to_string(), fraction.to_bits());
        if let Some(d) = self.data.get(&key) {
            return Ok(d.clone());
        }
        let spec = self.cfg.settings.get(name).ok_or_else(|| AdaptError::Unknown { kind: "data setting", name: name.into() })?;
        let data = match spec {
            SettingSpec::Translation { corpora, split } => {
                let get = |n: &String| self.reg.parallel.get(n).ok_or_else(|| AdaptError::Unknown { kind: "parallel corpus", name: n.clone() });
                let mut splits = split_and_subsample(get(&corpora[0])?, split, fraction)?;
                let train_only = SplitSpec { train_frac: 1.0, dev_frac: 0.0, test_frac: 0.0, seed: split.seed };
                for extra in &corpora[1..] {
                    let c = get(extra)?;
                    if !c.same_language_pair(&splits.train) {
                        return Err(AdaptError::Incompatible(format!("corpus {extra} has a different language pair")));
                    }
                    for p in split_and_subsample(c, &train_only, fraction)?.train.pairs {
                        let p = if p.src_lang == splits.train.langs.0 {
                            p
                        } else {
                            crate::corpus::SentencePair { src: p.tgt, tgt: p.src, src_lang: p.tgt_lang, tgt_lang: p.src_lang, ..p }
                        };
                        splits.train.pairs.push(p);
                    }
                }
                SettingData::Translation(splits)
            }
            SettingSpec::Sentiment { train, dev, test, subsample_seed } => {
                let get = |n: &String| {
                    self.reg.labeled.get(n).cloned().ok_or_else(|| AdaptError::Unknown { kind: "labeled corpus", name: n.clone() })
                };
                SettingData::Sentiment {
                    train: get(train)?.subsample(fraction, *subsample_seed)?,
                    dev: dev.as_ref().map(get).transpose()?,
                    test: get(test)?,
                }
            }
        };
        let d = std::rc::Rc::new(data);
        self.data.insert(key, d.clone());
        Ok(d)
    }

    fn mono(&self, names: &[String]) -> Result<Vec<&'a MonoCorpus>, AdaptError> {
        names
            .iter()
            .map(|n| self.reg.mono.get(n).ok_or_else(|| AdaptError::Unknown { kind: "monolingual corpus", name: n.clone() }))
            .collect()
    }

    /// Trains `plan` from a fresh model, reusing any cached stage prefix.
    /// Prefixes made only of `cat` stages do not depend on the data setting.
    fn run_plan(&mut self, plan_name: &str, setting: &str, fraction: f64, seed: u64, depth: usize) -> Result<Trained, AdaptError> {
        if depth > 8 {
            return Err(AdaptError::InvalidPlan(format!("generator chain through {plan_name} is too deep")));
        }
        let plan = self.cfg.plans.get(plan_name).ok_or_else(|| AdaptError::Unknown { kind: "plan", name: plan_name.into() })?.clone();
        plan.validate()?;
        let mut prefix = format!("seed={seed}");
        let mut cur: Option<Trained> = None;
        for st in &plan.stages {
            prefix.push('>');
            prefix.push_str(&serde_json::to_string(st).expect("stage serializes"));
            if st.kind != StageKind::Cat && !prefix.starts_with("ctx=") {
                prefix = format!("ctx={setting}@{fraction}|{prefix}");
            }
            if let Some(t) = self.cache.get(&prefix) {
                cur = Some(t.clone());
                continue;
            }
            let start = match cur.take() {
                Some(t) => t,
                None => Trained { ckpt: init_model(&self.model, derive_seed(seed, "init"))?, synthetic: 0 },
            };
            let stage_seed = derive_seed(seed, &prefix);
            let cfg = st.stage_config();
            let began = Instant::now();
            let next = match st.kind {
                StageKind::Cat => {
                    let corpora = self.mono(&st.data)?;
                    let mut mono = MonoCorpus::new(st.data.join("+"), corpora[0].lang.clone(), Vec::new());
                    for c in corpora {
                        mono.sentences.extend(c.sentences.iter().cloned());
                    }
                    let out = cat_pretrain(start.ckpt, self.tok, &mono, &self.cfg.masking, &cfg, stage_seed)?;
                    Trained { ckpt: out.ckpt, synthetic: start.synthetic }
                }
                StageKind::Tat => {
                    let gen_name = st.generator.clone().expect("validated");
                    let generator = self.run_plan(&gen_name, setting, fraction, seed, depth + 1)?;
                    let data = self.setting(setting, fraction)?;
                    let SettingData::Translation(splits) = &*data else {
                        return Err(AdaptError::InvalidPlan("tat needs a translation data setting".into()));
                    };
                    let fwd = Direction::new(splits.train.langs.0.clone(), splits.train.langs.1.clone())?;
                    let mut side = [
                        MonoCorpus::new("mono-src", fwd.src_lang.clone(), Vec::new()),
                        MonoCorpus::new("mono-tgt", fwd.tgt_lang.clone(), Vec::new()),
                    ];
                    for c in self.mono(&st.data)? {
                        let i = if c.lang == fwd.src_lang {
                            0
                        } else if c.lang == fwd.tgt_lang {
                            1
                        } else {
                            return Err(AdaptError::Incompatible(format!("monolingual corpus {} is outside {}", c.name, fwd.label())));
                        };
                        side[i].sentences.extend(c.sentences.iter().cloned());
                    }
                    let bt = bidirectional_bt(&generator.ckpt, self.tok, &side[0], &side[1], &fwd, &fwd.reversed(), &self.cfg.decode)?;
                    self.bt_reports.insert(prefix.clone(), bt.report.clone());
                    let out = tat_train(start.ckpt, self.tok, &bt.corpus, st.both_orientations, &cfg, stage_seed)?;
                    Trained { ckpt: out.ckpt, synthetic: start.synthetic + bt.corpus.len() }
                }
                StageKind::Ft => {
                    let data = self.setting(setting, fraction)?;
                    let out = match &*data {
                        SettingData::Translation(s) => finetune_translation(
                            start.ckpt,
                            self.tok,
                            &s.train,
                            Some(&s.dev),
                            &self.cfg.decode,
                            self.cfg.bleu_smoothing,
                            &cfg,
                            stage_seed,
                        )?,
                        SettingData::Sentiment { train, dev, .. } => {
                            finetune_classifier(start.ckpt, self.tok, train, dev.as_ref(), &cfg, stage_seed)?
                        }
                    };
                    Trained { ckpt: out.ckpt, synthetic: start.synthetic }
                }
            };
            let seconds = began.elapsed().as_secs_f64();
            log::info!("event=stage_done plan={plan_name} stage={} seconds={seconds:.2}", st.kind.stage().as_str());
            self.timings.push(StageTiming { key: prefix.clone(), seconds });
            self.cache.insert(prefix.clone(), next.clone());
            cur = Some(next);
        }
        match cur {
            Some(t) => Ok(t),
            None => Ok(Trained { ckpt: init_model(&self.model, derive_seed(seed, "init"))?, synthetic: 0 }),
        }
    }

    fn evaluate(&mut self, cell: &CellSpec, fraction: f64, seed: u64) -> Result<(Trained, Vec<(Option<String>, MetricName, f64)>, DataSizes), AdaptError> {
        let trained = self.run_plan(&cell.plan, &cell.setting, fraction, seed, 0)?;
        let data = self.setting(&cell.setting, fraction)?;
        let mut sizes = data.sizes();
        sizes.synthetic += trained.synthetic;
        let scores = match &*data {
            SettingData::Translation(s) => {
                let fwd = Direction::new(s.test.langs.0.clone(), s.test.langs.1.clone())?;
                let mut out = Vec::new();
                for d in [fwd.clone(), fwd.reversed()] {
                    let b = bleu_for(&trained.ckpt, self.tok, &s.test, &d, &self.cfg.decode, self.cfg.bleu_smoothing)?;
                    out.push((Some(d.label()), MetricName::Bleu, b));
                }
                out
            }
            SettingData::Sentiment { test, .. } => vec![(None, MetricName::MacroF1, f1_for(&trained.ckpt, self.tok, test)?)],
        };
        Ok((trained, scores, sizes))
    }
}

fn cell_key(cell: &CellSpec, fraction: f64, seed: u64) -> String {
    format!("{}_{}_{}_s{}", cell.variant, cell.setting, fraction, seed)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '-' })
        .collect()
}

/// Runs every (cell, fraction, seed) of the grid. A failing cell is recorded
/// in its report rows and the rest still run.
pub fn run_experiment(cfg: &ExperimentConfig, reg: &DataRegistry) -> Result<ExperimentOutput, AdaptError> {
    cfg.validate()?;
    let created = cfg
        .created
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    if cfg.cells.is_empty() {
        return Ok(ExperimentOutput {
            report: EvalReport::new(Vec::new(), created),
            tokenizer: None,
            checkpoints: BTreeMap::new(),
            bt_reports: BTreeMap::new(),
            timings: Vec::new(),
        });
    }
    let mut model = cfg.model.resolve()?;
    let tok = reg.train_tokenizer(&cfg.tokenizer, model.vocab_size)?;
    model.vocab_size = tok.vocab_size();
    log::info!("event=tokenizer kind={:?} vocab={}", tok.kind(), tok.vocab_size());
    let label = model.preset_name.clone().unwrap_or_else(|| "custom".into());
    let mut runner = Runner {
        cfg,
        reg,
        tok: &tok,
        model,
        data: HashMap::new(),
        cache: HashMap::new(),
        bt_reports: BTreeMap::new(),
        timings: Vec::new(),
    };
    let mut rows = Vec::new();
    let mut checkpoints = BTreeMap::new();
    for cell in &cfg.cells {
        let translation = matches!(cfg.settings.get(&cell.setting), Some(SettingSpec::Translation { .. }));
        for &fraction in &cell.fractions {
            for &seed in &cfg.seeds {
                let key = cell_key(cell, fraction, seed);
                log::info!("event=cell_start cell={key}");
                let row = |direction: Option<String>, metric, value, sizes, lineage, error| ReportRow {
                    cell_id: match &direction {
                        Some(d) => format!("{}/{}/{}/{}", cell.variant, cell.setting, fraction, d),
                        None => format!("{}/{}/{}", cell.variant, cell.setting, fraction),
                    },
                    model: label.clone(),
                    variant: cell.variant.clone(),
                    data_setting: cell.setting.clone(),
                    fraction,
                    direction,
                    metric,
                    value,
                    seed,
                    data_sizes: sizes,
                    lineage,
                    error,
                };
                match runner.evaluate(cell, fraction, seed) {
                    Ok((trained, scores, sizes)) => {
                        for (direction, metric, value) in scores {
                            log::info!("event=cell_done cell={key} direction={} metric={metric:?} value={value:.6}", direction.as_deref().unwrap_or("-"));
                            rows.push(row(direction, metric, Some(value), sizes.clone(), trained.ckpt.lineage().to_vec(), None));
                        }
                        checkpoints.insert(key, trained.ckpt);
                    }
                    Err(e) => {
                        log::error!("event=cell_failed cell={key} error={e}");
                        let sizes = DataSizes { train: 0, dev: 0, test: 0, synthetic: 0 };
                        if translation {
                            let fwd = match cfg.settings.get(&cell.setting) {
                                Some(SettingSpec::Translation { corpora, .. }) => reg.parallel.get(&corpora[0]).map(|c| c.langs.clone()),
                                _ => None,
                            };
                            let labels = match fwd {
                                Some((a, b)) => vec![format!("{}-{}", a.as_str(), b.as_str()), format!("{}-{}", b.as_str(), a.as_str())],
                                None => vec!["unknown".into()],
                            };
                            for l in labels {
                                rows.push(row(Some(l), MetricName::Bleu, None, sizes.clone(), Vec::new(), Some(e.to_string())));
                            }
                        } else {
                            rows.push(row(None, MetricName::MacroF1, None, sizes, Vec::new(), Some(e.to_string())));
                        }
                    }
                }
            }
        }
    }
    let (bt_reports, timings) = (runner.bt_reports, runner.timings);
    Ok(ExperimentOutput { report: EvalReport::new(rows, created), tokenizer: Some(tok), checkpoints, bt_reports, timings })
}
