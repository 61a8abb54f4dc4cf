//! Percent tables, distribution series and the on-disk report.

mod aggregate;
mod records;
mod series;
mod table;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aggregate::{
    round2, volume_share, window_reduction_ratio, Aggregates, Tally, DURATION_SHARE_LONG_US, DURATION_SHARE_SHORT_US,
    LENGTH_SHARE_PACKETS,
};
pub use records::{AnonIpv4, EventRow, FlowRow};
pub use series::{build_cdf, build_pdf, DistributionSeries, SeriesKind, XScale};
pub use table::{percent_table, Hundredths, PercentRow, PercentTable, RowInput};

use crate::flow::FlowCounters;
use crate::ingest::IngestStats;
use crate::tcp::RttSummary;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("table {0:?} has no rows with a nonzero count")]
    EmptyUniverse(String),
    #[error("no values to build a distribution from")]
    EmptyInput,
    #[error("bin width must be positive, got {0}")]
    NonPositiveBin(f64),
    #[error("value {0} cannot be binned")]
    InvalidValue(f64),
    #[error("cannot write {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to write raw addresses: no anonymization key configured")]
    RefusesRawAddresses,
    #[error("cannot read flow export {path}: {message}")]
    BadExport { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceInfo {
    /// File name only, so reports do not depend on where traces live.
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub bin_width_s: f64,
    pub other_threshold_percent: f64,
    pub rate_scale: XScale,
    pub config_sha256: String,
}

/// Everything a report is built from. `ingest` and `flow_counters` are
/// absent when re-aggregating an earlier export.
#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub rows: Vec<FlowRow>,
    pub events: Option<Vec<EventRow>>,
    pub ingest: Option<IngestStats>,
    pub flow_counters: Option<FlowCounters>,
    pub traces: Vec<TraceInfo>,
}

pub const TABLE_FILES: [&str; 5] = ["scope", "continent", "transport", "service", "packets_spreading"];
pub const SERIES_FILES: [&str; 3] = ["flow_length_cdf", "flow_duration_pdf", "flow_rate_cdf"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RttStats {
    pub count: usize,
    pub min_s: f64,
    pub median_s: f64,
    pub mean_s: f64,
}

impl From<RttSummary> for RttStats {
    fn from(s: RttSummary) -> Self {
        RttStats { count: s.count, min_s: s.min_s, median_s: s.median_s, mean_s: s.mean_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub flows: u64,
    pub bidirectional_flows: u64,
    pub tcp_flows: u64,
    pub tcp_data_packets: u64,
    pub single_packet_tcp_flows: u64,
    pub undefined_rate_tcp_flows: u64,
    pub window_reduction_packets: u64,
    /// Marked packets divided by TCP flows; not a probability.
    pub window_reduction_packets_per_flow: Option<f64>,
    pub window_reduction_packets_per_flow_2dp: Option<f64>,
    pub flows_with_window_reduction: u64,
    pub fraction_flows_with_window_reduction: Option<f64>,
    pub zero_window_packets: u64,
    pub volume_share_length_below_100: f64,
    pub volume_share_duration_above_300s: f64,
    pub volume_share_duration_at_most_3s: f64,
    pub ece_packets: u64,
    pub cwr_packets: u64,
    pub congestion_events: u64,
    pub congestion_flows_with_flag_evidence: u64,
    pub congestion_correlated_events: u64,
    /// Gaps in a sender's sequence space: data lost before the capture point.
    pub lost_segments_inferred: u64,
    pub lost_bytes_inferred: u64,
    pub duplicate_acks: u64,
    pub late_gap_fillers: u64,
    pub syn_retries: u64,
    pub flows_with_syn_retry: u64,
    pub establishment_failures_no_answer: u64,
    pub establishment_failures_refused: u64,
    pub rtt_handshake: Option<RttStats>,
    pub rtt_flow_median_ack: Option<RttStats>,
    pub ingest: Option<IngestStats>,
    pub flow_counters: Option<FlowCounters>,
}

pub fn summarize(agg: &Aggregates, input: &ReportInput) -> Summary {
    let ratio = window_reduction_ratio(agg.window_reduction_packets, agg.tcp_flows);
    let share = |b: u64| if agg.tcp_bytes == 0 { 0.0 } else { b as f64 / agg.tcp_bytes as f64 };
    let median_stats = {
        let us: Vec<u64> = agg.flow_median_rtt_us.iter().map(|m| m.round() as u64).collect();
        RttSummary::from_micros(&us).map(RttStats::from)
    };
    Summary {
        flows: agg.flows,
        bidirectional_flows: agg.bidirectional_flows,
        tcp_flows: agg.tcp_flows,
        tcp_data_packets: agg.data_classes.iter().sum(),
        single_packet_tcp_flows: agg.single_packet_flows,
        undefined_rate_tcp_flows: agg.undefined_rate_flows,
        window_reduction_packets: agg.window_reduction_packets,
        window_reduction_packets_per_flow: ratio,
        window_reduction_packets_per_flow_2dp: ratio.map(round2),
        flows_with_window_reduction: agg.flows_with_window_reduction,
        fraction_flows_with_window_reduction: (agg.tcp_flows > 0)
            .then(|| agg.flows_with_window_reduction as f64 / agg.tcp_flows as f64),
        zero_window_packets: agg.zero_window_packets,
        volume_share_length_below_100: share(agg.bytes_length_below_100),
        volume_share_duration_above_300s: share(agg.bytes_duration_above_300s),
        volume_share_duration_at_most_3s: share(agg.bytes_duration_at_most_3s),
        ece_packets: agg.ece_packets,
        cwr_packets: agg.cwr_packets,
        congestion_events: agg.congestion_events,
        congestion_flows_with_flag_evidence: agg.flows_with_flag_evidence,
        congestion_correlated_events: agg.correlated_congestion_events,
        lost_segments_inferred: agg.lost_segments,
        lost_bytes_inferred: agg.lost_bytes,
        duplicate_acks: agg.dup_acks,
        late_gap_fillers: agg.late_fillers,
        syn_retries: agg.syn_retries,
        flows_with_syn_retry: agg.flows_with_syn_retry,
        establishment_failures_no_answer: agg.failures_no_answer,
        establishment_failures_refused: agg.failures_refused,
        rtt_handshake: agg.handshake_rtt_summary().map(RttStats::from),
        rtt_flow_median_ack: median_stats,
        ingest: input.ingest,
        flow_counters: input.flow_counters,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OutputEntry {
    name: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    format: OutputFormat,
    pdf_bin_width_s: f64,
    other_threshold_percent: f64,
    rate_x_scale: XScale,
    inputs: Vec<TraceInfo>,
    outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<OutputEntry>,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf, ReportError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| ReportError::WriteFailure { path: path.clone(), source })?;
        self.written.push(OutputEntry { name: name.to_string(), sha256: sha256_hex(contents) });
        Ok(path)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T], header_of_empty: &str) -> Vec<u8> {
    if rows.is_empty() {
        return format!("{header_of_empty}\n").into_bytes();
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV serialization");
    }
    w.into_inner().expect("in-memory CSV flush")
}

/// Column header of `flows.csv`.
pub fn flow_csv_header() -> String {
    let probe = FlowRow::default();
    let bytes = csv_bytes(&[probe], "");
    String::from_utf8(bytes).expect("utf8").lines().next().unwrap_or_default().to_string()
}

const EVENT_HEADER: &str = "ts_us,kind,direction,detail,seq,src_addr,src_port,dst_addr,dst_port";

/// Reads a `flows.csv` written by [`emit_report`].
pub fn read_flow_export(path: &Path) -> Result<Vec<FlowRow>, ReportError> {
    let bad = |message: String| ReportError::BadExport { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if header != flow_csv_header() {
        return Err(bad("unexpected column layout".into()));
    }
    r.deserialize().map(|row| row.map_err(|e| bad(e.to_string()))).collect()
}

/// Writes tables, series, flow and event exports, `summary.json` and
/// `manifest.json` into `opts.out_dir`. Returns the paths written.
pub fn emit_report(input: &ReportInput, opts: &ReportOptions) -> Result<Vec<PathBuf>, ReportError> {
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| ReportError::WriteFailure { path: dir.clone(), source })?;
    let agg = Aggregates::from_rows(&input.rows);
    let mut w = Writer { dir, written: Vec::new() };
    let mut paths = Vec::new();

    let tables = [
        agg.scope_table(),
        agg.continent_table(),
        agg.transport_table(),
        agg.service_table(opts.other_threshold_percent),
        agg.packets_spreading_table(),
    ];
    for (name, table) in TABLE_FILES.iter().zip(tables) {
        let (csv, text) = match table {
            Ok(t) => (t.to_csv(), t.to_text()),
            Err(ReportError::EmptyUniverse(title)) => (
                if *name == "service" {
                    "label,count,percent_by_count,bytes,percent_by_bytes,packets,percent_by_packets\n".to_string()
                } else {
                    "label,count,percent_by_count,bytes,percent_by_bytes\n".to_string()
                },
                format!("{title}\n(no data)\n"),
            ),
            Err(e) => return Err(e),
        };
        paths.push(w.write(&format!("{name}.csv"), csv.as_bytes())?);
        if opts.format == OutputFormat::Text {
            paths.push(w.write(&format!("{name}.txt"), text.as_bytes())?);
        }
    }

    let series = [
        build_cdf("flow_length_packets", &agg.lengths(), XScale::Linear),
        build_pdf("flow_duration_s", &agg.durations_s(), opts.bin_width_s),
        build_cdf("flow_mean_rate_bps", &agg.tcp_rates_bps, opts.rate_scale),
    ];
    for (name, s) in SERIES_FILES.iter().zip(series) {
        let csv = match s {
            Ok(s) => s.to_csv(),
            Err(ReportError::EmptyInput) => DistributionSeries::empty_csv().to_string(),
            Err(e) => return Err(e),
        };
        paths.push(w.write(&format!("{name}.csv"), csv.as_bytes())?);
    }

    paths.push(w.write("flows.csv", &csv_bytes(&input.rows, &flow_csv_header()))?);
    if let Some(events) = &input.events {
        paths.push(w.write("events.csv", &csv_bytes(events, EVENT_HEADER))?);
    }
    let summary = summarize(&agg, input);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    paths.push(w.write("summary.json", json.as_bytes())?);

    let mut outputs = std::mem::take(&mut w.written);
    outputs.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        tool: "tcpmetro",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: opts.config_sha256.clone(),
        format: opts.format,
        pdf_bin_width_s: opts.bin_width_s,
        other_threshold_percent: opts.other_threshold_percent,
        rate_x_scale: opts.rate_scale,
        inputs: input.traces.clone(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    paths.push(w.write("manifest.json", json.as_bytes())?);
    Ok(paths)
}
