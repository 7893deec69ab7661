//! Report emission.
//!
//! JSON is the serialized [`MetricsReport`] with fields in declaration order
//! and a `schema_version` at the top.
//!
//! CSV has one row per (policy, decode step, head), in report order, with the
//! columns
//!
//! | column | meaning |
//! |---|---|
//! | `policy` | policy name |
//! | `step` | 1-based decode step |
//! | `head` | head index |
//! | `position` | logical position of the decoded token |
//! | `l2_error` | L2 distance of the output to the full-cache output |
//! | `cosine_error` | `1 - cos` of the same pair |
//! | `argmax_match` | `1` if the most-attended position matches the reference |
//! | `reference_argmax` | reference's most-attended position (empty if none) |
//! | `reference_argmax_retained` | `1` if that position is still cached |
//! | `stored_entries` | centers plus local tokens |
//! | `lut_entries` | look-up-table entries, including zero-mapped ones |
//! | `kv_bytes`, `scalar_bytes`, `lut_bytes`, `total_bytes` | byte accounting |
//!
//! The diagnostics table (`analyze`) has columns `head`, `sparsity_rate`,
//! `redundancy_rate`. Reals use the shortest representation that parses back
//! to the same `f64`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::analysis::HeadDiagnostics;
use crate::error::{Error, Result};
use crate::experiment::MetricsReport;

pub const STEP_CSV_HEADER: &str = "policy,step,head,position,l2_error,cosine_error,argmax_match,reference_argmax,reference_argmax_retained,stored_entries,lut_entries,kv_bytes,scalar_bytes,lut_bytes,total_bytes";
pub const DIAGNOSTICS_CSV_HEADER: &str = "head,sparsity_rate,redundancy_rate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub fn report_json(report: &MetricsReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from(STEP_CSV_HEADER);
    out.push('\n');
    for p in &report.policies {
        for r in &p.steps {
            let m = &r.memory;
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{},{},{},{},{},{},{},{},{}\n",
                p.policy,
                r.step,
                r.head,
                r.position,
                r.l2_error,
                r.cosine_error,
                u8::from(r.argmax_match),
                r.reference_argmax.map(|x| x.to_string()).unwrap_or_default(),
                u8::from(r.reference_argmax_retained),
                m.stored_entries,
                m.lut_entries,
                m.kv_bytes,
                m.scalar_bytes,
                m.lut_bytes,
                m.total_bytes,
            ));
        }
    }
    out
}

pub fn diagnostics_csv(rows: &[HeadDiagnostics]) -> String {
    let mut out = String::from(DIAGNOSTICS_CSV_HEADER);
    out.push('\n');
    for d in rows {
        out.push_str(&format!("{},{:?},{:?}\n", d.head, d.sparsity_rate, d.redundancy_rate));
    }
    out
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => report_json(report),
        ReportFormat::Csv => Ok(report_csv(report)),
    }
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}
