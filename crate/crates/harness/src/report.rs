use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::{BenchError, Metrics, RunConfig};

pub const CSV_HEADER: [&str; 13] = [
    "batch", "events", "throughput", "p50", "p95", "p99", "useful", "sync", "lock", "construct", "explore", "abort", "decision",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// JSON for `.json` paths, CSV otherwise.
    pub fn from_path(p: &Path) -> Self {
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Run parameters as written into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub workload: String,
    pub knobs: String,
    pub threads: usize,
    pub strategy: String,
    pub speculation: Option<bool>,
    pub thresholds: String,
    pub shuffle: usize,
    pub verify: bool,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        let workload = match &c.workload {
            crate::bench::WorkloadSpec::Static(k) => k.to_string(),
            crate::bench::WorkloadSpec::Dynamic(s) => format!("dynamic:{} ({} phases)", s.kind, s.phases.len()),
        };
        Self {
            workload,
            knobs: c.knobs.describe(),
            threads: c.threads,
            strategy: c.strategy_label(),
            speculation: c.speculation,
            thresholds: c.thresholds.to_text(),
            shuffle: c.shuffle,
            verify: c.verify,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ConfigEcho,
    pub metrics: Metrics,
    pub verified: Option<bool>,
}

/// CSV rows, one per batch; latencies in milliseconds, breakdown in seconds.
pub fn write_csv<W: Write>(w: W, m: &Metrics) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for b in &m.batches {
        let d = &b.breakdown;
        out.write_record([
            b.batch.to_string(),
            b.events.to_string(),
            format!("{:.1}", b.throughput),
            format!("{:.3}", b.p50_ms),
            format!("{:.3}", b.p95_ms),
            format!("{:.3}", b.p99_ms),
            format!("{:.6}", d.useful),
            format!("{:.6}", d.sync),
            format!("{:.6}", d.lock),
            format!("{:.6}", d.construct),
            format!("{:.6}", d.explore),
            format!("{:.6}", d.abort),
            b.decision.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_report(report: &Report, format: Format, path: &Path) -> Result<(), BenchError> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(w, &report.metrics),
        Format::Json => {
            serde_json::to_writer_pretty(w, report)?;
            Ok(())
        }
    }
}

pub fn read_json_report(path: &Path) -> Result<Report, BenchError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
