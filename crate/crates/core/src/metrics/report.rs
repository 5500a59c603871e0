use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{round_ms, MetricsRecord};
use crate::error::{Error, Result};
use crate::sim::SimTime;

/// Milliseconds, serialised with exactly three fractional digits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Ms(pub f64);

impl Serialize for Ms {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(format!("{:.3}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ms {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(d).map(Ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Ms,
    pub p50: Ms,
    pub p90: Ms,
    pub p99: Ms,
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let pct = |p| Ms(percentile_nearest_rank(&v, p).unwrap_or(f64::NAN));
        Some(Summary {
            mean: Ms(round_ms(v.iter().sum::<f64>() / v.len() as f64)),
            p50: pct(50.0),
            p90: pct(90.0),
            p99: pct(99.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub requests_submitted: u64,
    pub requests_completed: u64,
    /// First arrival to last completion.
    pub duration_ms: Option<Ms>,
    pub throughput_rps: Option<f64>,
    pub target_utilization: Vec<f64>,
    pub network_queueing_delay_total_ms: Ms,
    pub network_queueing_delay_mean_ms: Option<Ms>,
    pub network_messages: u64,
    pub mean_acceptance_ratio: Option<f64>,
    pub extrapolated_predictions: u64,
    pub ttft_ms: Option<Summary>,
    pub tpot_ms: Option<Summary>,
    pub e2e_latency_ms: Option<Summary>,
}

/// Engine-side totals needed to build [`SystemMetrics`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub requests_submitted: u64,
    pub first_arrival: Option<SimTime>,
    pub last_completion: Option<SimTime>,
    pub target_busy_us: Vec<u64>,
    /// Time delivered messages wait at their endpoint before service.
    pub network_queueing_us: u64,
    pub network_messages: u64,
    pub extrapolated_predictions: u64,
}

impl SystemMetrics {
    pub fn compute(records: &[MetricsRecord], stats: &RunStats) -> SystemMetrics {
        let completed = records.len() as u64;
        let duration_us = match (stats.first_arrival, stats.last_completion) {
            (Some(a), Some(c)) if completed > 0 => Some(c.saturating_sub(a).micros()),
            _ => None,
        };
        let throughput = duration_us.map(|d| {
            if d == 0 {
                f64::INFINITY
            } else {
                completed as f64 / (d as f64 / 1e6)
            }
        });
        let utilization = stats
            .target_busy_us
            .iter()
            .map(|&b| match duration_us {
                Some(d) if d > 0 => (b as f64 / d as f64).clamp(0.0, 1.0),
                _ => 0.0,
            })
            .collect();
        let ratios: Vec<f64> = records.iter().filter_map(|r| r.acceptance_ratio).collect();
        let qd_total = stats.network_queueing_us as f64 / 1000.0;
        SystemMetrics {
            requests_submitted: stats.requests_submitted,
            requests_completed: completed,
            duration_ms: duration_us.map(|d| Ms(d as f64 / 1000.0)),
            throughput_rps: throughput.filter(|t| t.is_finite()),
            target_utilization: utilization,
            network_queueing_delay_total_ms: Ms(qd_total),
            network_queueing_delay_mean_ms: (stats.network_messages > 0)
                .then(|| Ms(round_ms(qd_total / stats.network_messages as f64))),
            network_messages: stats.network_messages,
            mean_acceptance_ratio: (!ratios.is_empty())
                .then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
            extrapolated_predictions: stats.extrapolated_predictions,
            ttft_ms: Summary::of(records.iter().map(|r| r.ttft_ms.0)),
            tpot_ms: Summary::of(records.iter().filter_map(|r| r.tpot_ms.map(|t| t.0))),
            e2e_latency_ms: Summary::of(records.iter().map(|r| r.e2e_latency_ms.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_digest: String,
    pub seed: u64,
    pub system: SystemMetrics,
    pub requests: Vec<MetricsRecord>,
}

/// Sorts records by id and assembles the report.
pub fn emit_report(
    mut records: Vec<MetricsRecord>,
    stats: &RunStats,
    config_digest: String,
    seed: u64,
) -> Report {
    records.sort_by_key(|r| r.request_id);
    Report {
        config_digest,
        seed,
        system: SystemMetrics::compute(&records, stats),
        requests: records,
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json()).map_err(|e| Error::file(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

#[derive(Serialize)]
struct CsvRow {
    request_id: u64,
    output_length: u32,
    ttft_ms: String,
    tpot_ms: String,
    e2e_latency_ms: String,
    acceptance_ratio: String,
    routing_decision: u32,
    iterations: usize,
    gamma_sequence: String,
}

/// One row per request; sequences are `;`-joined.
pub fn write_csv(report: &Report, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(";");
    for r in &report.requests {
        w.serialize(CsvRow {
            request_id: r.request_id,
            output_length: r.output_length,
            ttft_ms: format!("{:.3}", r.ttft_ms.0),
            tpot_ms: r.tpot_ms.map(|t| format!("{:.3}", t.0)).unwrap_or_default(),
            e2e_latency_ms: format!("{:.3}", r.e2e_latency_ms.0),
            acceptance_ratio: r.acceptance_ratio.map(|a| a.to_string()).unwrap_or_default(),
            routing_decision: r.routing_decision,
            iterations: r.gamma_sequence.len(),
            gamma_sequence: join(&r.gamma_sequence),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    write_csv(report, BufWriter::new(f))
}
