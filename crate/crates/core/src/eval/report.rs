use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::model::Stage;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Bleu,
    MacroF1,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Back-translated pairs used by the run.
    pub synthetic: usize,
}

/// One (cell, seed) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub cell_id: String,
    /// Architecture label, e.g. a preset name.
    pub model: String,
    pub variant: String,
    pub data_setting: String,
    pub fraction: f64,
    /// `src-tgt` for translation cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    pub metric: MetricName,
    /// Absent when the cell failed.
    pub value: Option<f64>,
    pub seed: u64,
    pub data_sizes: DataSizes,
    pub lineage: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub toolkit_version: String,
    /// RFC 3339; supplied by the caller so reruns can be compared byte for byte.
    pub created: String,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<ReportRow>, created: impl Into<String>) -> Self {
        EvalReport { toolkit_version: TOOLKIT_VERSION.to_string(), created: created.into(), rows }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    /// Long-format learning-curve series: `series,fraction,bleu`.
    Csv,
}

pub fn build_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => markdown(report),
        ReportFormat::Csv => {
            let mut s = String::from("series,fraction,bleu\n");
            for (name, points) in curves(report) {
                for (f, v) in points {
                    writeln!(s, "{name},{f},{}", fmt_value(v)).unwrap();
                }
            }
            s
        }
    }
}

/// One `fraction,bleu` document per (model, variant, direction) series that
/// was run at more than one fraction, keyed by a file-name-safe series name.
pub fn curve_series(report: &EvalReport) -> BTreeMap<String, String> {
    curves(report)
        .into_iter()
        .map(|(name, points)| {
            let mut s = String::from("fraction,bleu\n");
            for (f, v) in points {
                writeln!(s, "{f},{}", fmt_value(v)).unwrap();
            }
            (name, s)
        })
        .collect()
}

type Points = Vec<(f64, Option<f64>)>;

fn curves(report: &EvalReport) -> BTreeMap<String, Points> {
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<Option<f64>>>> = BTreeMap::new();
    for r in report.rows.iter().filter(|r| r.metric == MetricName::Bleu) {
        let name = safe_name(&format!("{}_{}_{}", r.model, r.variant, r.direction.as_deref().unwrap_or("any")));
        groups.entry(name).or_default().entry(r.fraction.to_bits()).or_default().push(r.value);
    }
    groups
        .into_iter()
        .filter(|(_, by_frac)| by_frac.len() > 1)
        .map(|(name, by_frac)| {
            let mut pts: Points = by_frac.into_iter().map(|(bits, vals)| (f64::from_bits(bits), mean(&vals))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, pts)
        })
        .collect()
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect()
}

/// Mean of the successful values; `None` when every run failed.
fn mean(vals: &[Option<f64>]) -> Option<f64> {
    let ok: Vec<f64> = vals.iter().flatten().copied().collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "failed".into(), |v| format!("{v:.2}"))
}

/// Row label -> column label -> values, with labels in first-seen order.
struct Grid {
    rows: Vec<String>,
    cols: Vec<String>,
    cells: BTreeMap<(usize, usize), Vec<Option<f64>>>,
}

impl Grid {
    fn new(cols: Vec<String>) -> Self {
        Grid { rows: Vec::new(), cols, cells: BTreeMap::new() }
    }

    fn add(&mut self, row: String, col: String, v: Option<f64>) {
        let r = self.rows.iter().position(|x| *x == row).unwrap_or_else(|| {
            self.rows.push(row);
            self.rows.len() - 1
        });
        let c = self.cols.iter().position(|x| *x == col).unwrap_or_else(|| {
            self.cols.push(col);
            self.cols.len() - 1
        });
        self.cells.entry((r, c)).or_default().push(v);
    }

    fn render(&self, out: &mut String, corner: &str) {
        let used: Vec<usize> = (0..self.cols.len()).filter(|&c| self.cells.keys().any(|k| k.1 == c)).collect();
        write!(out, "| {corner} |").unwrap();
        for &c in &used {
            write!(out, " {} |", self.cols[c]).unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(used.len()));
        out.push('\n');
        for (r, label) in self.rows.iter().enumerate() {
            write!(out, "| {label} |").unwrap();
            for &c in &used {
                let cell = self.cells.get(&(r, c)).map_or_else(|| "-".to_string(), |v| fmt_value(mean(v)));
                write!(out, " {cell} |").unwrap();
            }
            out.push('\n');
        }
        out.push('\n');
    }
}

fn variant_label(v: &str) -> String {
    match v {
        "init" => "Init".into(),
        "ft" => "FT".into(),
        "cat" => "CaT".into(),
        other => other.to_string(),
    }
}

fn direction_label(d: Option<&str>) -> String {
    d.map_or_else(|| "-".into(), |d| d.replace('-', " → "))
}

fn markdown(report: &EvalReport) -> String {
    let mut out = format!("# Evaluation report\n\nToolkit {}, created {}.\n\n", report.toolkit_version, report.created);
    if report.rows.is_empty() {
        out.push_str("No results.\n");
        return out;
    }

    let mut sentiment = Grid::new(vec!["Init".into(), "FT".into(), "CaT".into()]);
    for r in report.rows.iter().filter(|r| r.metric == MetricName::MacroF1) {
        let mut label = format!("{} ({})", r.model, r.data_setting);
        if r.fraction != 1.0 {
            write!(label, " @ {}", r.fraction).unwrap();
        }
        sentiment.add(label, variant_label(&r.variant), r.value.map(|v| v * 100.0));
    }
    if !sentiment.rows.is_empty() {
        out.push_str("## Sentiment classification (macro F1 x 100, mean over seeds)\n\n");
        sentiment.render(&mut out, "Model");
    }

    let bleu: Vec<&ReportRow> = report.rows.iter().filter(|r| r.metric == MetricName::Bleu).collect();
    let mut translation = Grid::new(Vec::new());
    for r in bleu.iter().filter(|r| r.fraction == 1.0) {
        let label = format!("{} / {} ({})", r.model, variant_label(&r.variant), r.data_setting);
        translation.add(label, direction_label(r.direction.as_deref()), r.value);
    }
    if !translation.rows.is_empty() {
        out.push_str("## Translation (BLEU, mean over seeds)\n\n");
        translation.render(&mut out, "Model");
    }

    let mut fractions: Vec<f64> = bleu.iter().map(|r| r.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    if fractions.len() > 1 {
        let mut curve = Grid::new(fractions.iter().map(|f| format!("{}%", (f * 100.0).round())).collect());
        for r in &bleu {
            let label = format!("{} / {} / {}", r.model, variant_label(&r.variant), direction_label(r.direction.as_deref()));
            curve.add(label, format!("{}%", (r.fraction * 100.0).round()), r.value);
        }
        out.push_str("## Learning curve (BLEU by training fraction)\n\n");
        curve.render(&mut out, "Pipeline");
    }

    let failures: Vec<&ReportRow> = report.rows.iter().filter(|r| r.error.is_some()).collect();
    if !failures.is_empty() {
        out.push_str("## Failed cells\n\n");
        for r in failures {
            writeln!(out, "- {} (seed {}): {}", r.cell_id, r.seed, r.error.as_deref().unwrap_or_default()).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(variant: &str, metric: MetricName, fraction: f64, direction: Option<&str>, value: f64, seed: u64) -> ReportRow {
        ReportRow {
            cell_id: format!("{variant}-{fraction}-{}", direction.unwrap_or("cls")),
            model: "tiny".into(),
            variant: variant.into(),
            data_setting: "toy".into(),
            fraction,
            direction: direction.map(str::to_string),
            metric,
            value: Some(value),
            seed,
            data_sizes: DataSizes::default(),
            lineage: vec![Stage::Init, Stage::Ft],
            error: None,
        }
    }

    #[test]
    fn sentiment_table_shape() {
        let rows = ["init", "ft", "cat"].iter().map(|v| row(v, MetricName::MacroF1, 1.0, None, 0.5, 0)).collect();
        let md = build_report(&EvalReport::new(rows, "t"), ReportFormat::Markdown);
        assert!(md.contains("| Model | Init | FT | CaT |"), "{md}");
        assert!(md.contains("| tiny (toy) | 50.00 | 50.00 | 50.00 |"), "{md}");
    }

    #[test]
    fn learning_curve_series() {
        let mut rows = Vec::new();
        for f in [0.2, 0.4, 0.6, 0.8, 1.0] {
            for seed in 0..2 {
                rows.push(row("tat", MetricName::Bleu, f, Some("eng-pcm"), 10.0 * f + seed as f64, seed));
            }
        }
        let rep = EvalReport::new(rows, "t");
        let series = curve_series(&rep);
        assert_eq!(series.len(), 1);
        let (name, doc) = series.iter().next().unwrap();
        assert_eq!(name, "tiny-tat-eng-pcm");
        let xs: Vec<&str> = doc.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(xs, ["0.2", "0.4", "0.6", "0.8", "1"]);
        assert!(doc.starts_with("fraction,bleu\n0.2,2.50\n"));
        let md = build_report(&rep, ReportFormat::Markdown);
        assert!(md.contains("| Pipeline | 20% | 40% | 60% | 80% | 100% |"), "{md}");
    }

    #[test]
    fn empty_report_is_valid() {
        let rep = EvalReport::new(Vec::new(), "t");
        let json = build_report(&rep, ReportFormat::Json);
        assert_eq!(EvalReport::from_json(&json).unwrap(), rep);
        assert!(build_report(&rep, ReportFormat::Markdown).contains("No results."));
        assert_eq!(build_report(&rep, ReportFormat::Csv), "series,fraction,bleu\n");
    }

    #[test]
    fn json_is_deterministic_and_round_trips() {
        let rows = vec![row("ft", MetricName::Bleu, 1.0, Some("pcm-eng"), 12.345678901, 3)];
        let rep = EvalReport::new(rows, "2024-01-01T00:00:00Z");
        let a = build_report(&rep, ReportFormat::Json);
        assert_eq!(a, build_report(&rep.clone(), ReportFormat::Json));
        assert_eq!(EvalReport::from_json(&a).unwrap(), rep);
    }
}
