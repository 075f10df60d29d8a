use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{nfc, CorpusError, LanguageTag, MonoCorpus, ParallelCorpus, SentencePair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ParallelFormat {
    /// One JSON pair record per line.
    Jsonl,
    /// Twin files `<stem>.<src>` and `<stem>.<tgt>` with one sentence per line.
    LineAligned,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, text: &str) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    f.write_all(text.as_bytes()).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn stem_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string()
}

/// `<stem>.<lang>`; a path already ending in one of the languages is treated as the stem's twin.
fn twin_paths(path: &Path, langs: &(LanguageTag, LanguageTag)) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext == langs.0.as_str() || ext == langs.1.as_str() => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |l: &LanguageTag| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(l.as_str());
        PathBuf::from(s)
    };
    (with(&langs.0), with(&langs.1))
}

/// Reads a parallel corpus. Text is NFC-normalized; record order is kept.
pub fn ingest_parallel(
    path: &Path,
    format: ParallelFormat,
    langs: (LanguageTag, LanguageTag),
) -> Result<ParallelCorpus, CorpusError> {
    if langs.0 == langs.1 {
        return Err(CorpusError::LanguageMismatch(format!("source and target are both {}", langs.0)));
    }
    match format {
        ParallelFormat::Jsonl => {
            let text = read(path)?;
            let mut corpus = ParallelCorpus::new(stem_name(path), langs);
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut pair: SentencePair = serde_json::from_str(line)
                    .map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
                if !corpus.accepts(&pair) {
                    return Err(CorpusError::Malformed {
                        line: i + 1,
                        message: format!(
                            "pair {}->{} outside corpus languages {}/{}",
                            pair.src_lang, pair.tgt_lang, corpus.langs.0, corpus.langs.1
                        ),
                    });
                }
                pair.src = nfc(&pair.src);
                pair.tgt = nfc(&pair.tgt);
                corpus.pairs.push(pair);
            }
            Ok(corpus)
        }
        ParallelFormat::LineAligned => {
            let (sp, tp) = twin_paths(path, &langs);
            let src = read(&sp)?;
            let tgt = read(&tp)?;
            let src_lines: Vec<&str> = src.lines().collect();
            let tgt_lines: Vec<&str> = tgt.lines().collect();
            if src_lines.len() != tgt_lines.len() {
                return Err(CorpusError::Alignment {
                    line: src_lines.len().min(tgt_lines.len()) + 1,
                    src_lines: src_lines.len(),
                    tgt_lines: tgt_lines.len(),
                });
            }
            let name = stem_name(&sp);
            let mut corpus = ParallelCorpus::new(name.clone(), langs);
            for (s, t) in src_lines.iter().zip(&tgt_lines) {
                corpus.pairs.push(SentencePair::real(s, t, &corpus.langs, &name));
            }
            Ok(corpus)
        }
    }
}

pub fn write_parallel_jsonl(corpus: &ParallelCorpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for p in &corpus.pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Writes `<stem>.<a>` and `<stem>.<b>` for the corpus languages `(a, b)`,
/// placing each pair's text by language.
pub fn write_line_aligned(corpus: &ParallelCorpus, stem: &Path) -> Result<(PathBuf, PathBuf), CorpusError> {
    let (pa, pb) = twin_paths(stem, &corpus.langs);
    let mut a = String::new();
    let mut b = String::new();
    for p in &corpus.pairs {
        a.push_str(p.side(&corpus.langs.0).unwrap_or_default());
        a.push('\n');
        b.push_str(p.side(&corpus.langs.1).unwrap_or_default());
        b.push('\n');
    }
    write_file(&pa, &a)?;
    write_file(&pb, &b)?;
    Ok((pa, pb))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonoRecord {
    text: String,
    lang: LanguageTag,
}

/// Plain text (one sentence per line, blank lines skipped) or, for `.jsonl`
/// files, `{"text", "lang"}` records.
pub fn ingest_monolingual(path: &Path, lang: LanguageTag) -> Result<MonoCorpus, CorpusError> {
    let text = read(path)?;
    let is_jsonl = path.extension().and_then(|e| e.to_str()) == Some("jsonl");
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if is_jsonl {
            let rec: MonoRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
            if rec.lang != lang {
                return Err(CorpusError::Malformed { line: i + 1, message: format!("language {} is not {lang}", rec.lang) });
            }
            if !rec.text.trim().is_empty() {
                sentences.push(nfc(&rec.text));
            }
        } else {
            sentences.push(nfc(line));
        }
    }
    Ok(MonoCorpus::new(stem_name(path), lang, sentences))
}

pub fn write_monolingual(corpus: &MonoCorpus, path: &Path) -> Result<(), CorpusError> {
    let is_jsonl = path.extension().and_then(|e| e.to_str()) == Some("jsonl");
    let mut out = String::new();
    for s in &corpus.sentences {
        if is_jsonl {
            let rec = MonoRecord { text: s.clone(), lang: corpus.lang.clone() };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        } else {
            out.push_str(s);
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Tab-separated `key<TAB>text` lines.
pub fn read_keyed_segments(path: &Path) -> Result<Vec<(String, String)>, CorpusError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, t) = line
            .split_once('\t')
            .ok_or_else(|| CorpusError::Malformed { line: i + 1, message: "expected key<TAB>text".into() })?;
        out.push((k.trim().to_string(), nfc(t)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs() -> (LanguageTag, LanguageTag) {
        (LanguageTag::eng(), LanguageTag::pcm())
    }

    #[test]
    fn line_aligned_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("toy");
        fs::write(dir.path().join("toy.eng"), "the boy\nthe girl\n").unwrap();
        fs::write(dir.path().join("toy.pcm"), "di boy\ndi girl\n").unwrap();
        let c = ingest_parallel(&stem, ParallelFormat::LineAligned, langs()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[1].tgt, "di girl");
        assert!(c.pairs.iter().all(|p| p.origin == super::super::Origin::Real));
        // passing one of the twins works too
        let again = ingest_parallel(&dir.path().join("toy.eng"), ParallelFormat::LineAligned, langs()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn empty_twins_give_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("e.eng"), "").unwrap();
        fs::write(dir.path().join("e.pcm"), "").unwrap();
        let c = ingest_parallel(&dir.path().join("e"), ParallelFormat::LineAligned, langs()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn unequal_twins_fail_at_first_unmatched_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("u.eng"), "a\nb\nc\n").unwrap();
        fs::write(dir.path().join("u.pcm"), "a\nb\n").unwrap();
        let err = ingest_parallel(&dir.path().join("u"), ParallelFormat::LineAligned, langs()).unwrap_err();
        assert!(matches!(err, CorpusError::Alignment { line: 3, .. }));
    }

    #[test]
    fn malformed_jsonl_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = r#"{"src":"a","tgt":"b","src_lang":"eng","tgt_lang":"pcm","origin":"real","source_name":"x"}"#;
        fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        let err = ingest_parallel(&p, ParallelFormat::Jsonl, langs()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn monolingual_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        fs::write(&p, "one\n\ntwo\n   \nthree\n").unwrap();
        assert_eq!(ingest_monolingual(&p, LanguageTag::pcm()).unwrap().len(), 3);
        fs::write(&p, "").unwrap();
        assert!(ingest_monolingual(&p, LanguageTag::pcm()).unwrap().is_empty());
        assert!(matches!(
            ingest_monolingual(&dir.path().join("missing.txt"), LanguageTag::pcm()),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn monolingual_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let c = MonoCorpus::new("m", LanguageTag::pcm(), vec!["wetin dey happen".into(), "e don do".into()]);
        write_monolingual(&c, &p).unwrap();
        assert_eq!(ingest_monolingual(&p, LanguageTag::pcm()).unwrap(), c);
    }

    #[test]
    fn nfc_applied_at_ingest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("n.eng"), "cafe\u{301}\n").unwrap();
        fs::write(dir.path().join("n.pcm"), "caf\u{e9}\n").unwrap();
        let c = ingest_parallel(&dir.path().join("n"), ParallelFormat::LineAligned, langs()).unwrap();
        assert_eq!(c.pairs[0].src, c.pairs[0].tgt);
    }
}
