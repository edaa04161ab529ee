//! Report serialization.
//!
//! JSON output is canonical: object keys sorted, numbers in serde_json's
//! shortest-round-trip form, trailing newline. Byte-identical across runs
//! and platforms, so golden-file tests can compare whole files. CSV carries
//! one scalar summary row per run.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::CompletionStatus;
use crate::scenario::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unsupported report format \"{0}\" (expected json or csv)")]
    UnsupportedFormat(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

pub const CSV_HEADER: &str = "kind,page_size,frame_count,scan_window,master_seed,\
personal_pages_written,deleted_pages_total,deleted_pages_recoverable,remanence_rate,\
completions,completions_deleted,completions_residue,completions_error,\
total_latency_ns,total_energy_nj,baseline_latency_ns,privacy_latency_ns";

pub fn emit_report(report: &RunReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    match format {
        ReportFormat::Json => canonical_json(report),
        ReportFormat::Csv => Ok(csv_summary(report).into_bytes()),
    }
}

/// Serialize through `serde_json::Value`, whose object map is a BTreeMap:
/// keys come out sorted no matter the struct field order.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, ReportError> {
    let value = serde_json::to_value(value).map_err(|e| ReportError::Serialize(e.to_string()))?;
    let mut bytes = serde_json::to_vec_pretty(&value)
        .map_err(|e| ReportError::Serialize(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_summary(report: &RunReport) -> String {
    let deleted = report
        .completions
        .iter()
        .filter(|c| c.status == CompletionStatus::Deleted)
        .count();
    let residue = report
        .completions
        .iter()
        .filter(|c| c.status == CompletionStatus::ResidueFound)
        .count();
    let errors = report
        .completions
        .iter()
        .filter(|c| matches!(c.status, CompletionStatus::Error(_)))
        .count();
    let kind = match report.scenario.kind {
        crate::medium::NvmKind::Overwritable => "overwritable",
        crate::medium::NvmKind::FlashLike => "flash_like",
    };
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        kind,
        report.scenario.geometry.page_size,
        report.scenario.geometry.frame_count,
        report.scenario.scan_window,
        report.scenario.master_seed,
        report.conservation.personal_pages_written,
        report.remanence.deleted_pages_total,
        report.remanence.deleted_pages_recoverable,
        report.remanence.remanence_rate,
        report.completions.len(),
        deleted,
        residue,
        errors,
        report.ledgers.total.latency_ns,
        report.ledgers.total.energy_nj,
        report.ledgers.baseline_deletes.latency_ns,
        report.ledgers.privacy_deletes.latency_ns,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!(
            "xml".parse::<ReportFormat>(),
            Err(ReportError::UnsupportedFormat("xml".into()))
        );
    }

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(serde::Serialize)]
        struct Unordered {
            zebra: u32,
            apple: u32,
        }
        let bytes = canonical_json(&Unordered { zebra: 1, apple: 2 }).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.find("apple").unwrap() < text.find("zebra").unwrap());
        assert!(text.ends_with('\n'));
    }
}
