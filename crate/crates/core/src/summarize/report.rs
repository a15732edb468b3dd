//! Deterministic report files: paper-style tables as CSV or Markdown, or
//! the whole report as JSON.

use super::{AnthologySummary, DtwComparison, Result, Stats, SummaryError};
use crate::corpus::sha256_hex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summaries: Vec<AnthologySummary>,
    pub dtw: Vec<DtwComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// input name -> sha256
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<ManifestEntry>,
}

/// `<model_tag>_<metric>` rows by stat, one column per anthology.
struct Table {
    columns: Vec<String>,
    /// (row label, stat label) -> column -> value
    rows: BTreeMap<(String, String), BTreeMap<String, f64>>,
}

impl Table {
    fn summaries(summaries: &[AnthologySummary]) -> Self {
        let columns: BTreeSet<String> = summaries.iter().map(|s| s.anthology.clone()).collect();
        let mut rows: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
        for s in summaries {
            for (metric, stats) in &s.per_metric {
                for (label, v) in Stats::LABELS.iter().zip(stats.values()) {
                    rows.entry((format!("{}_{metric}", s.model_tag), (*label).to_owned()))
                        .or_default()
                        .insert(s.anthology.clone(), v);
                }
            }
            rows.entry(("freq_gini".to_owned(), "value".to_owned()))
                .or_default()
                .insert(s.anthology.clone(), s.gini);
        }
        Table {
            columns: columns.into_iter().collect(),
            rows,
        }
    }
}

fn dtw_columns(d: &DtwComparison) -> [String; 3] {
    [
        format!("inner_{}", d.anthology_a),
        format!("inner_{}", d.anthology_b),
        format!("outer_{}_vs_{}", d.anthology_a, d.anthology_b),
    ]
}

/// CSV rows with LF terminators, collected into a string.
struct CsvOut(csv::Writer<Vec<u8>>);

impl CsvOut {
    fn new() -> Self {
        CsvOut(
            csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .flexible(true)
                .from_writer(Vec::new()),
        )
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) {
        self.0.write_record(fields).expect("writes to memory");
    }

    fn finish(self) -> String {
        String::from_utf8(self.0.into_inner().expect("writes to memory")).expect("utf-8 fields")
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn render_csv(report: &Report) -> Vec<(String, String)> {
    let table = Table::summaries(&report.summaries);
    let mut summary = CsvOut::new();
    summary.row(["metric".to_owned(), "stat".to_owned()].into_iter().chain(table.columns.clone()));
    for ((metric, stat), cells) in &table.rows {
        summary.row(
            [metric.clone(), stat.clone()]
                .into_iter()
                .chain(table.columns.iter().map(|c| cells.get(c).map_or(String::new(), |v| num(*v)))),
        );
    }

    let mut segments = CsvOut::new();
    segments.row(["model_tag", "anthology", "segment", "entropy", "ppl"].map(String::from));
    let mut layers = CsvOut::new();
    layers.row(["model_tag", "anthology", "metric", "layer", "value"].map(String::from));
    let mut sorted: Vec<&AnthologySummary> = report.summaries.iter().collect();
    sorted.sort_by(|a, b| (&a.model_tag, &a.anthology).cmp(&(&b.model_tag, &b.anthology)));
    for s in &sorted {
        let p = &s.segment_profile;
        for (i, (e, ppl)) in p.entropy.iter().zip(&p.ppl).enumerate() {
            segments.row([s.model_tag.clone(), s.anthology.clone(), i.to_string(), num(*e), num(*ppl)]);
        }
        for (metric, curve) in &s.layer_profile {
            for (l, v) in curve {
                layers.row([s.model_tag.clone(), s.anthology.clone(), metric.clone(), l.to_string(), num(*v)]);
            }
        }
    }

    let mut dtw = CsvOut::new();
    dtw.row(["model_tag", "comparison", "stat", "inner_a", "inner_b", "outer"].map(String::from));
    for d in &report.dtw {
        let name = format!("{}|{}", d.anthology_a, d.anthology_b);
        for (i, label) in Stats::LABELS.iter().enumerate() {
            dtw.row(
                [d.model_tag.clone(), name.clone(), (*label).to_owned()]
                    .into_iter()
                    .chain([d.inner_a, d.inner_b, d.outer].iter().map(|s| num(s.values()[i]))),
            );
        }
    }
    vec![
        ("summary.csv".into(), summary.finish()),
        ("segment_profile.csv".into(), segments.finish()),
        ("layer_profile.csv".into(), layers.finish()),
        ("dtw.csv".into(), dtw.finish()),
    ]
}

fn md_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    out.push('|');
    for c in cells {
        let _ = write!(out, " {} |", c.replace('|', "\\|"));
    }
    out.push('\n');
}

fn md_rule(out: &mut String, n: usize) {
    md_row(out, std::iter::repeat_n("---".to_owned(), n));
}

fn render_markdown(report: &Report) -> String {
    let table = Table::summaries(&report.summaries);
    let mut out = String::new();
    let mut current: Option<&str> = None;
    for ((metric, stat), cells) in &table.rows {
        if current != Some(metric.as_str()) {
            if current.is_some() {
                out.push('\n');
            }
            md_row(&mut out, std::iter::once(format!("**{metric}**")).chain(table.columns.iter().cloned()));
            md_rule(&mut out, table.columns.len() + 1);
            current = Some(metric);
        }
        md_row(
            &mut out,
            std::iter::once(stat.clone()).chain(table.columns.iter().map(|c| {
                cells.get(c).map_or(String::new(), |v| if stat == "n" { format!("{v}") } else { format!("{v:.4}") })
            })),
        );
    }
    for d in &report.dtw {
        out.push('\n');
        md_row(
            &mut out,
            std::iter::once(format!("**{}_entropy_dtw**", d.model_tag)).chain(dtw_columns(d)),
        );
        md_rule(&mut out, 4);
        for (i, label) in Stats::LABELS.iter().enumerate() {
            md_row(
                &mut out,
                std::iter::once((*label).to_owned()).chain([d.inner_a, d.inner_b, d.outer].iter().map(|s| format!("{:.4}", s.values()[i]))),
            );
        }
    }
    let mut sorted: Vec<&AnthologySummary> = report.summaries.iter().collect();
    sorted.sort_by(|a, b| (&a.model_tag, &a.anthology).cmp(&(&b.model_tag, &b.anthology)));
    for s in sorted {
        let p = &s.segment_profile;
        out.push('\n');
        md_row(
            &mut out,
            std::iter::once(format!("**{}_segments** {}", s.model_tag, s.anthology)).chain((0..p.entropy.len()).map(|i| i.to_string())),
        );
        md_rule(&mut out, p.entropy.len() + 1);
        md_row(&mut out, std::iter::once("entropy".to_owned()).chain(p.entropy.iter().map(|v| format!("{v:.4}"))));
        md_row(&mut out, std::iter::once("ppl".to_owned()).chain(p.ppl.iter().map(|v| format!("{v:.4}"))));
    }
    out
}

/// File name and contents of every artifact for `format`.
pub fn render(report: &Report, format: ReportFormat) -> Vec<(String, String)> {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
            s.push('\n');
            vec![("report.json".into(), s)]
        }
        ReportFormat::Markdown => vec![("report.md".into(), render_markdown(report))],
    }
}

/// Writes the report files and a `manifest.json` listing them with their
/// hashes next to the given input hashes.
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path, inputs: &BTreeMap<String, String>) -> Result<Manifest> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| SummaryError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = Manifest {
        inputs: inputs.clone(),
        artifacts: Vec::new(),
    };
    for (name, body) in render(report, format) {
        let path = dir.join(&name);
        std::fs::write(&path, &body).map_err(io(&path))?;
        manifest.artifacts.push(ManifestEntry {
            path: name,
            sha256: sha256_hex(body.as_bytes()),
            bytes: body.len(),
        });
    }
    let path = dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    std::fs::write(&path, body).map_err(io(&path))?;
    Ok(manifest)
}
