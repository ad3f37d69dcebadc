//! Report rendering for scan findings and corpus statistics.

mod json;
mod sarif;
mod text;

use std::fmt;
use std::str::FromStr;

use crate::analysis::ParseFailure;
use crate::rules::Finding;
use crate::stats::CorpusStats;

pub use json::{findings_json, stats_json};

/// Explains how lag figures are measured.
pub const LEGEND: &str = "lag: days from the earliest release newer than the referenced one \
to the analysis time (or the workflow file's modification time with --config-mtime); \
1 month = 30 days; buckets are [0,30), [30,90), [90,365), [365,inf) days. \
release date: timestamp of the commit a tag points to. \
invalid ref: neither a known tag, a known branch, nor a hex commit hash. \
usages include job-level reusable workflow calls";

pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
    Sarif,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Text => "text",
            Format::Sarif => "sarif",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("unsupported format `{0}` (expected json, text or sarif)")]
    UnsupportedFormat(String),
}

impl FromStr for Format {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            "sarif" => Ok(Format::Sarif),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

/// Everything a scan report shows. Findings are expected in report order.
#[derive(Debug, Clone, Default)]
pub struct ScanReport<'a> {
    pub findings: &'a [Finding],
    pub diagnostics: &'a [ParseFailure],
    pub tool: Option<ToolInfo>,
}

impl<'a> ScanReport<'a> {
    pub fn new(findings: &'a [Finding]) -> Self {
        Self {
            findings,
            diagnostics: &[],
            tool: None,
        }
    }
}

pub fn render_findings(report: &ScanReport, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_string(&findings_json(report)).expect("json report");
            out.push('\n');
            out.into_bytes()
        }
        Format::Text => text::findings(report).into_bytes(),
        Format::Sarif => {
            let mut out =
                serde_json::to_string_pretty(&sarif::findings(report)).expect("sarif report");
            out.push('\n');
            out.into_bytes()
        }
    }
}

/// Corpus statistics as JSON or text. SARIF carries results, not
/// statistics, and is rejected.
pub fn render_stats(
    stats: &CorpusStats,
    format: Format,
    top_n: usize,
) -> Result<Vec<u8>, ReportError> {
    match format {
        Format::Json => {
            let mut out =
                serde_json::to_string_pretty(&stats_json(stats, top_n)).expect("json stats");
            out.push('\n');
            Ok(out.into_bytes())
        }
        Format::Text => Ok(text::stats(stats, top_n).into_bytes()),
        Format::Sarif => Err(ReportError::UnsupportedFormat(
            "sarif (corpus statistics support json and text)".into(),
        )),
    }
}

pub(crate) fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        (part as f64 * 10000.0 / whole as f64).round() / 100.0
    }
}
