//! Rendering results as a capability × test-type matrix.
//!
//! CSV columns: `capability,test_type,test_name,n_cases,failure_rate`. The
//! JSON report leaves out the run timestamp, so two runs with the same seed
//! and predictions render byte-identical documents.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{capability_rows, Capability, SuiteError, SuiteResult, TestResult, TestType};
use crate::expect::FailureRate;
use crate::perturb::FieldDelta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (markdown, csv, json)")),
        }
    }
}

pub fn render_report(result: &SuiteResult, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(result),
        ReportFormat::Csv => csv_report(result),
        ReportFormat::Json => json_report(result),
    }
}

fn rate_text(t: &TestResult) -> String {
    t.rate().map_or_else(|| "n/a".to_string(), |r| r.to_string())
}

fn rounded(r: Option<FailureRate>) -> Option<f64> {
    r.map(|r| r.rounded())
}

/// Perturbed text with each edit's replacement wrapped in `**`.
fn highlight(perturbed: &str, field: usize, deltas: &[FieldDelta]) -> String {
    let Some(fd) = deltas.iter().find(|d| d.field == field) else { return perturbed.to_string() };
    let mut out = String::new();
    let mut cursor = 0;
    let mut shift: isize = 0;
    for e in &fd.delta.edits {
        let start = (e.start as isize + shift) as usize;
        let end = start + e.new.len();
        shift += e.new.len() as isize - e.old.len() as isize;
        let (Some(before), Some(span)) = (perturbed.get(cursor..start), perturbed.get(start..end)) else {
            return perturbed.to_string();
        };
        out.push_str(before);
        if span.trim().is_empty() {
            out.push_str(span);
        } else {
            let lead = span.len() - span.trim_start().len();
            let _ = write!(out, "{}**{}**", &span[..lead], span.trim_start());
        }
        cursor = end;
    }
    out.push_str(perturbed.get(cursor..).unwrap_or_default());
    out
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn markdown(result: &SuiteResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", result.suite);
    let _ = writeln!(out, "adapter: `{}`, seed: {}\n", result.metadata.adapter, result.metadata.seed);
    if result.tests.is_empty() {
        out.push_str("No tests.\n");
        return out;
    }

    out.push_str("| capability | MFT | INV | DIR |\n|---|---|---|---|\n");
    for cap in capability_rows(result.tests.iter().map(|t| &t.capability)) {
        let _ = write!(out, "| {} |", md_escape(cap.as_str()));
        for ty in TestType::ALL {
            let cell: Vec<String> = result
                .tests
                .iter()
                .filter(|t| t.capability == cap && t.test_type == ty)
                .map(|t| format!("{}: {}", md_escape(&t.name), rate_text(t)))
                .collect();
            let _ = write!(out, " {} |", cell.join("<br>"));
        }
        out.push('\n');
    }

    for t in &result.tests {
        let _ = writeln!(out, "\n## {} ({} × {})\n", t.name, t.capability, t.test_type);
        if !t.description.is_empty() {
            let _ = writeln!(out, "{}\n", t.description);
        }
        let _ = write!(out, "failure rate: {} ({} / {} cases", rate_text(t), t.failed, t.n_cases);
        if t.errored > 0 {
            let _ = write!(out, ", {} errored", t.errored);
        }
        if t.skipped > 0 {
            let _ = write!(out, ", {} skipped", t.skipped);
        }
        out.push_str(")\n");
        for s in &t.slices {
            let rate = s
                .failure_rate
                .map_or_else(|| "n/a".to_string(), |_| FailureRate { failed: s.failed, total: s.n_cases }.to_string());
            let _ = writeln!(out, "- slice `{}`: {} ({} / {})", s.query, rate, s.failed, s.n_cases);
        }
        if t.exemplars.is_empty() {
            continue;
        }
        out.push_str("\nfailing cases:\n\n");
        for &id in &t.exemplars {
            let Some(c) = t.case(id) else { continue };
            let outcomes: Vec<String> = c
                .predictions
                .iter()
                .map(|(role, p)| format!("{role}={} ({:.2})", p.display_outcome(), p.score))
                .collect();
            let shown = match &c.perturbed {
                Some(p) => {
                    let fields: Vec<String> = (0..p.len()).map(|f| highlight(&p[f], f, &c.deltas)).collect();
                    format!("{} → {}", c.texts.join(" | "), fields.join(" | "))
                }
                None => c.texts.join(" | "),
            };
            let _ = writeln!(out, "- {} [{}]", md_escape(&shown), outcomes.join(", "));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub capability: String,
    pub test_type: String,
    pub test_name: String,
    pub n_cases: usize,
    pub failure_rate: Option<f64>,
}

fn csv_report(result: &SuiteResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["capability", "test_type", "test_name", "n_cases", "failure_rate"]).expect("in-memory write");
    for t in &result.tests {
        let rate = t.rate().map(|r| r.to_string()).unwrap_or_default();
        w.write_record([t.capability.as_str(), t.test_type.as_str(), &t.name, &t.n_cases.to_string(), &rate])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn parse_csv_report(src: &str) -> Result<Vec<CsvRow>, SuiteError> {
    let mut r = csv::Reader::from_reader(src.as_bytes());
    r.deserialize().map(|row| row.map_err(|e| SuiteError::Parse(e.to_string()))).collect()
}

#[derive(Serialize)]
struct JsonReport<'a> {
    schema_version: u32,
    suite: &'a str,
    adapter: &'a str,
    seed: u64,
    matrix: Vec<MatrixRow<'a>>,
    tests: Vec<JsonTest<'a>>,
}

#[derive(Serialize)]
struct MatrixRow<'a> {
    capability: Capability,
    #[serde(rename = "MFT")]
    mft: Vec<&'a str>,
    #[serde(rename = "INV")]
    inv: Vec<&'a str>,
    #[serde(rename = "DIR")]
    dir: Vec<&'a str>,
}

#[derive(Serialize)]
struct JsonTest<'a> {
    name: &'a str,
    capability: &'a Capability,
    test_type: TestType,
    n_cases: usize,
    failed: usize,
    errored: usize,
    skipped: usize,
    failure_rate: Option<f64>,
    slices: Vec<JsonSlice>,
    exemplars: Vec<JsonExemplar<'a>>,
}

#[derive(Serialize)]
struct JsonSlice {
    query: String,
    n_cases: usize,
    failure_rate: Option<f64>,
}

#[derive(Serialize)]
struct JsonExemplar<'a> {
    id: usize,
    texts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbed: Option<&'a [String]>,
    #[serde(skip_serializing_if = "<[FieldDelta]>::is_empty")]
    deltas: &'a [FieldDelta],
    outcomes: Vec<String>,
}

fn json_report(result: &SuiteResult) -> String {
    let names = |cap: &Capability, ty: TestType| -> Vec<&str> {
        result.tests.iter().filter(|t| &t.capability == cap && t.test_type == ty).map(|t| t.name.as_str()).collect()
    };
    let matrix = capability_rows(result.tests.iter().map(|t| &t.capability))
        .into_iter()
        .map(|cap| MatrixRow {
            mft: names(&cap, TestType::Mft),
            inv: names(&cap, TestType::Inv),
            dir: names(&cap, TestType::Dir),
            capability: cap,
        })
        .collect();
    let tests = result
        .tests
        .iter()
        .map(|t| JsonTest {
            name: &t.name,
            capability: &t.capability,
            test_type: t.test_type,
            n_cases: t.n_cases,
            failed: t.failed,
            errored: t.errored,
            skipped: t.skipped,
            failure_rate: rounded(t.rate()),
            slices: t
                .slices
                .iter()
                .map(|s| JsonSlice {
                    query: s.query.to_string(),
                    n_cases: s.n_cases,
                    failure_rate: s.failure_rate.map(|_| FailureRate { failed: s.failed, total: s.n_cases }.rounded()),
                })
                .collect(),
            exemplars: t
                .exemplars
                .iter()
                .filter_map(|&id| t.case(id))
                .map(|c| JsonExemplar {
                    id: c.id,
                    texts: &c.texts,
                    perturbed: c.perturbed.as_deref(),
                    deltas: &c.deltas,
                    outcomes: c.predictions.iter().map(|(role, p)| format!("{role}={}", p.display_outcome())).collect(),
                })
                .collect(),
        })
        .collect();
    let report = JsonReport {
        schema_version: result.schema_version,
        suite: &result.suite,
        adapter: &result.metadata.adapter,
        seed: result.metadata.seed,
        matrix,
        tests,
    };
    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
    s.push('\n');
    s
}
