//! CSV and JSON report emission.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::MetricsReport;

/// Stable CSV column order.
pub const COLUMNS: [&str; 10] = [
    "engine",
    "seed",
    "load",
    "throughput",
    "latency_mean",
    "latency_p95",
    "processing_mean",
    "processing_p95",
    "stored_values_max",
    "concurrent_interactions",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}' (csv or json)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    engine: String,
    seed: u64,
    load: f64,
    throughput: f64,
    latency_mean: f64,
    latency_p95: f64,
    processing_mean: f64,
    processing_p95: f64,
    stored_values_max: u64,
    concurrent_interactions: i64,
}

impl From<&MetricsReport> for Row {
    fn from(m: &MetricsReport) -> Row {
        Row {
            engine: m.engine.clone(),
            seed: m.seed,
            load: m.load,
            throughput: m.throughput,
            latency_mean: m.latency_mean,
            latency_p95: m.latency_p95,
            processing_mean: m.processing_mean,
            processing_p95: m.processing_p95,
            stored_values_max: m.stored_values_max,
            concurrent_interactions: m.concurrent_interactions,
        }
    }
}

/// One row per report. The header is written even when `reports` is empty.
pub fn write_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in reports {
        w.serialize(Row::from(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the schema columns back; extra fields are left at their defaults.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsReport>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        out.push(MetricsReport {
            engine: row.engine,
            seed: row.seed,
            load: row.load,
            throughput: row.throughput,
            latency_mean: row.latency_mean,
            latency_p95: row.latency_p95,
            processing_mean: row.processing_mean,
            processing_p95: row.processing_p95,
            stored_values_max: row.stored_values_max,
            concurrent_interactions: row.concurrent_interactions,
            ..MetricsReport::default()
        });
    }
    Ok(out)
}

pub fn write_json<W: Write>(reports: &[MetricsReport], out: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(out, reports)?;
    Ok(())
}

pub fn read_json<R: Read>(input: R) -> Result<Vec<MetricsReport>, ReportError> {
    Ok(serde_json::from_reader(input)?)
}

pub fn write<W: Write>(reports: &[MetricsReport], format: Format, out: W) -> Result<(), ReportError> {
    match format {
        Format::Csv => write_csv(reports, out),
        Format::Json => write_json(reports, out),
    }
}

pub fn to_csv_string(reports: &[MetricsReport]) -> String {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is utf-8")
}
