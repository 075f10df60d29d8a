//! C ABI over the core toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_load` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`PaStatus`]; on failure a message for the calling thread is available
//! from [`pa_last_error_message`]. Strings returned through `char **` are
//! owned by the caller and released with [`pa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pidgin_adapt::adapt::{load_config, run_experiment, translate_texts, DataRegistry, Direction};
use pidgin_adapt::corpus::LanguageTag;
use pidgin_adapt::eval::{bleu_on_text, macro_f1, Smoothing};
use pidgin_adapt::model::{classify, load_checkpoint, predict_class, Checkpoint, DecodeConfig, DecodeMode};
use pidgin_adapt::orthography::{builtin_rules, normalize_token};
use pidgin_adapt::tokenize::{TokenizerSpec, UNK_ID};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidArgument = 4,
    Tokenizer = 5,
    Model = 6,
    Experiment = 7,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Number of sentiment classes: positive, negative, neutral.
pub const PA_NUM_LABELS: usize = 3;

/// Opaque tokenizer handle.
pub struct PaTokenizer(TokenizerSpec);

/// Opaque model handle.
pub struct PaModel(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Fail(PaStatus, String);

impl Fail {
    fn new(status: PaStatus, e: impl ToString) -> Self {
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(PaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(PaStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(PaStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|e| Fail::new(PaStatus::InvalidArgument, e))?;
    *out = c.into_raw();
    Ok(())
}

fn existing(path: &str) -> Result<&Path, Fail> {
    let p = Path::new(path);
    if p.exists() {
        Ok(p)
    } else {
        Err(Fail(PaStatus::Io, format!("{path} does not exist")))
    }
}

fn lang(code: &str) -> Result<LanguageTag, Fail> {
    LanguageTag::new(code).map_err(|e| Fail::new(PaStatus::InvalidArgument, e))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a tokenizer saved by `tokenize-train` or an experiment run.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_tokenizer_load(dir: *const c_char, out: *mut *mut PaTokenizer) -> PaStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        if out.is_null() {
            return Err(Fail(PaStatus::NullArgument, "out is null".into()));
        }
        let tok = TokenizerSpec::load(existing(dir)?).map_err(|e| Fail::new(PaStatus::Tokenizer, e))?;
        *out = Box::into_raw(Box::new(PaTokenizer(tok)));
        Ok(())
    })
}

/// # Safety
/// `tok` must come from [`pa_tokenizer_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pa_tokenizer_free(tok: *mut PaTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// # Safety
/// `tok` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_tokenizer_vocab_size(tok: *const PaTokenizer) -> usize {
    tok.as_ref().map_or(0, |t| t.0.vocab_size())
}

/// Encodes `text` without `<bos>`/`<eos>`. `*len` receives the token count;
/// when it exceeds `capacity` nothing is copied and `BUFFER_TOO_SMALL` is
/// returned, so a call with `capacity = 0` queries the size.
///
/// # Safety
/// `ids` must have room for `capacity` values (it may be null when 0).
#[no_mangle]
pub unsafe extern "C" fn pa_tokenizer_encode(
    tok: *const PaTokenizer,
    text_in: *const c_char,
    ids: *mut u32,
    capacity: usize,
    len: *mut usize,
) -> PaStatus {
    guard(|| {
        let tok = non_null(tok, "tokenizer")?;
        let s = text(text_in, "text")?;
        if len.is_null() {
            return Err(Fail(PaStatus::NullArgument, "len is null".into()));
        }
        let enc = tok.0.encode(s, false);
        *len = enc.len();
        if enc.len() > capacity {
            return Err(Fail(PaStatus::BufferTooSmall, format!("need {} ids, have room for {capacity}", enc.len())));
        }
        if !enc.is_empty() {
            if ids.is_null() {
                return Err(Fail(PaStatus::NullArgument, "ids is null".into()));
            }
            ptr::copy_nonoverlapping(enc.as_ptr(), ids, enc.len());
        }
        Ok(())
    })
}

/// # Safety
/// `ids` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_tokenizer_decode(
    tok: *const PaTokenizer,
    ids: *const u32,
    len: usize,
    out: *mut *mut c_char,
) -> PaStatus {
    guard(|| {
        let tok = non_null(tok, "tokenizer")?;
        let ids: &[u32] = if len == 0 { &[] } else { std::slice::from_raw_parts(non_null(ids, "ids")?, len) };
        let s = tok.0.decode(ids).map_err(|e| Fail::new(PaStatus::Tokenizer, e))?;
        put_string(out, s)
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_model_load(path: *const c_char, out: *mut *mut PaModel) -> PaStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(Fail(PaStatus::NullArgument, "out is null".into()));
        }
        let ckpt = load_checkpoint(existing(path)?).map_err(|e| Fail::new(PaStatus::Model, e))?;
        *out = Box::into_raw(Box::new(PaModel(ckpt)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`pa_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pa_model_free(model: *mut PaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Content hash of the model parameters (hex SHA-256).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_model_hash(model: *const PaModel, out: *mut *mut c_char) -> PaStatus {
    guard(|| put_string(out, non_null(model, "model")?.0.content_hash()))
}

/// Translates one sentence from `src_lang` to `tgt_lang` (e.g. "eng",
/// "pcm"). `beam_size` 0 decodes greedily.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_model_translate(
    model: *const PaModel,
    tok: *const PaTokenizer,
    sentence: *const c_char,
    src_lang: *const c_char,
    tgt_lang: *const c_char,
    beam_size: u32,
    out: *mut *mut c_char,
) -> PaStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let tok = non_null(tok, "tokenizer")?;
        let s = text(sentence, "sentence")?;
        let dir = Direction::new(lang(text(src_lang, "src_lang")?)?, lang(text(tgt_lang, "tgt_lang")?)?)
            .map_err(|e| Fail::new(PaStatus::InvalidArgument, e))?;
        let mut decode = DecodeConfig::default();
        if beam_size > 0 {
            decode.mode = DecodeMode::Beam;
            decode.beam_size = beam_size as usize;
        }
        let mut res = translate_texts(&model.0, &tok.0, &[s.to_string()], &dir, &decode)
            .map_err(|e| Fail::new(PaStatus::Model, e))?;
        put_string(out, res.pop().unwrap_or_default())
    })
}

/// Class probabilities (positive, negative, neutral) for one sentence and
/// the index of the most probable class.
///
/// # Safety
/// `probs` must have room for [`PA_NUM_LABELS`] values; `label` may be null.
#[no_mangle]
pub unsafe extern "C" fn pa_model_classify(
    model: *const PaModel,
    tok: *const PaTokenizer,
    sentence: *const c_char,
    probs: *mut f64,
    label: *mut u32,
) -> PaStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        let tok = non_null(tok, "tokenizer")?;
        let s = text(sentence, "sentence")?;
        if probs.is_null() {
            return Err(Fail(PaStatus::NullArgument, "probs is null".into()));
        }
        let mut ids = tok.0.encode(s, false);
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        let p = classify(&model.0, &ids).map_err(|e| Fail::new(PaStatus::Model, e))?;
        ptr::copy_nonoverlapping(p.as_ptr(), probs, PA_NUM_LABELS);
        if !label.is_null() {
            *label = predict_class(&p) as u32;
        }
        Ok(())
    })
}

/// Corpus BLEU over `n` whitespace-tokenized hypothesis/reference pairs.
/// `add_k` > 0 enables add-k smoothing for orders 2 to 4.
///
/// # Safety
/// `hyps` and `refs` must each point to `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pa_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    add_k: f64,
    score: *mut f64,
) -> PaStatus {
    guard(|| {
        if n == 0 || hyps.is_null() || refs.is_null() || score.is_null() {
            return Err(Fail(PaStatus::NullArgument, "empty or null input".into()));
        }
        let collect = |p: *const *const c_char, what: &str| -> Result<Vec<String>, Fail> {
            std::slice::from_raw_parts(p, n).iter().map(|&s| text(s, what).map(str::to_string)).collect()
        };
        let smoothing = if add_k > 0.0 { Smoothing::AddK(add_k) } else { Smoothing::None };
        let b = bleu_on_text(&collect(hyps, "hypothesis")?, &collect(refs, "reference")?, smoothing)
            .map_err(|e| Fail::new(PaStatus::InvalidArgument, e))?;
        *score = b.score;
        Ok(())
    })
}

/// Macro-averaged F1 over class indices in `[0, PA_NUM_LABELS)`.
///
/// # Safety
/// `pred` and `gold` must each point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn pa_macro_f1(pred: *const u32, gold: *const u32, n: usize, out: *mut f64) -> PaStatus {
    guard(|| {
        if n == 0 || pred.is_null() || gold.is_null() || out.is_null() {
            return Err(Fail(PaStatus::NullArgument, "empty or null input".into()));
        }
        let conv = |p: *const u32| std::slice::from_raw_parts(p, n).iter().map(|&x| x as usize).collect::<Vec<_>>();
        *out = macro_f1(&conv(pred), &conv(gold)).map_err(|e| Fail::new(PaStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// Maps a spelling variant to its canonical form with the built-in rules.
///
/// # Safety
/// `token` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_normalize_token(token: *const c_char, out: *mut *mut c_char) -> PaStatus {
    guard(|| {
        let t = text(token, "token")?;
        put_string(out, normalize_token(t, &builtin_rules()))
    })
}

/// Runs an experiment grid file and writes its run directory.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pa_experiment_run(grid: *const c_char, out_dir: *const c_char) -> PaStatus {
    guard(|| {
        let grid = existing(text(grid, "grid")?)?;
        let out_dir = Path::new(text(out_dir, "out_dir")?);
        let exp = |e: pidgin_adapt::adapt::AdaptError| Fail::new(PaStatus::Experiment, e);
        let cfg = load_config(grid).map_err(exp)?;
        let reg = DataRegistry::load(&cfg.data, grid.parent().unwrap_or(Path::new(""))).map_err(exp)?;
        let out = run_experiment(&cfg, &reg).map_err(exp)?;
        out.write(&cfg, &reg.checksums, out_dir).map_err(exp)?;
        Ok(())
    })
}
