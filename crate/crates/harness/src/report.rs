//! Machine-readable experiment reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mbrain_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Comparison a metric must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "bound", rename_all = "snake_case")]
pub enum Check {
    AtLeast(f64),
    Above(f64),
    Below(f64),
    AtMost(f64),
    Equals(f64),
}

impl Check {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Check::AtLeast(b) => v >= b,
            Check::Above(b) => v > b,
            Check::Below(b) => v < b,
            Check::AtMost(b) => v <= b,
            Check::Equals(b) => v == b,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Check::AtLeast(b) => format!(">= {b}"),
            Check::Above(b) => format!("> {b}"),
            Check::Below(b) => format!("< {b}"),
            Check::AtMost(b) => format!("<= {b}"),
            Check::Equals(b) => format!("== {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub reference_value: Option<f64>,
    /// Where the reference value comes from.
    pub source: Option<String>,
    pub check: Option<Check>,
    pub passed: Option<bool>,
}

impl Metric {
    pub fn info(name: &str, value: f64) -> Self {
        Self { name: name.into(), value, reference_value: None, source: None, check: None, passed: None }
    }

    pub fn checked(name: &str, value: f64, check: Check) -> Self {
        Self { check: Some(check), passed: Some(check.holds(value)), ..Self::info(name, value) }
    }

    pub fn cite(mut self, reference_value: f64, source: &str) -> Self {
        self.reference_value = Some(reference_value);
        self.source = Some(source.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub metrics: Vec<Metric>,
    /// Free-form trace lines (decision logs, notes).
    pub log: Vec<String>,
    /// Only filled when timing is requested, so reports stay reproducible.
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn new(experiment: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self { experiment: experiment.into(), seed, config, metrics: Vec::new(), log: Vec::new(), wall_clock_seconds: None }
    }

    pub fn push(&mut self, metric: Metric) {
        self.metrics.push(metric);
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.value)
    }

    /// True when every checked metric passed.
    pub fn all_passed(&self) -> bool {
        self.metrics.iter().all(|m| m.passed != Some(false))
    }

    pub fn failures(&self) -> Vec<&Metric> {
        self.metrics.iter().filter(|m| m.passed == Some(false)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "text" | "txt" => Ok(ReportFormat::Text),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("metric,value,reference_value,source,check,passed\n");
    for m in &report.metrics {
        let check = m.check.map(|c| c.describe()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&m.name),
            m.value,
            opt(&m.reference_value),
            csv_field(m.source.as_deref().unwrap_or("")),
            csv_field(&check),
            opt(&m.passed)
        );
    }
    out
}

pub fn to_text(report: &ExperimentReport) -> String {
    let rows: Vec<[String; 5]> = report
        .metrics
        .iter()
        .map(|m| {
            [
                m.name.clone(),
                format!("{:.4}", m.value),
                m.reference_value.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                m.check.map(|c| c.describe()).unwrap_or_else(|| "-".into()),
                match m.passed {
                    Some(true) => "PASS".into(),
                    Some(false) => "FAIL".into(),
                    None => "-".into(),
                },
            ]
        })
        .collect();
    let header = ["Metric", "Value", "Reference", "Check", "Result"];
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join(" | ")
    };
    let mut out = format!("{} (seed {})\n", report.experiment, report.seed);
    out.push_str(&line(&header.map(String::from)));
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    for m in report.metrics.iter().filter(|m| m.source.is_some()) {
        let _ = writeln!(out, "[{}] {}", m.name, m.source.as_deref().unwrap_or(""));
    }
    for l in &report.log {
        let _ = writeln!(out, "  {l}");
    }
    if let Some(t) = report.wall_clock_seconds {
        let _ = writeln!(out, "wall clock: {t:.1} s");
    }
    out
}

pub fn render(report: &ExperimentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => to_json(report),
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Text => to_text(report),
    }
}

pub fn emit_report(report: &ExperimentReport, path: &Path, format: ReportFormat) -> Result<()> {
    std::fs::write(path, render(report, format)).map_err(|e| Error::Io { path: path.into(), source: e })
}

pub fn read_json_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
