//! Trace analysis from pcap files to report inputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::anon::Anonymizer;
use crate::classify::{
    classify_service, classify_transport, load_geo_db, load_services_db, lookup_continent, server_port,
    ClassifyError, GeoDb, PrefixConfig, Scope, ServiceDb,
};
use crate::config::{ConfigError, RunConfig};
use crate::flow::{flow_metrics, FlowCounters, FlowRecord, FlowTable};
use crate::ingest::{IngestError, IngestStats, TraceReader};
use crate::report::{AnonIpv4, EventRow, FlowRow, ReportError, ReportInput, TraceInfo};
use crate::tcp::{derive_congestion_events, estimate_rtt, EstablishmentOutcome, EventKind, TcpConfig};

/// How often, in trace time, idle flows are swept out.
const SWEEP_INTERVAL_US: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("{path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Databases and settings shared by every trace of a run.
pub struct Context {
    pub prefixes: PrefixConfig,
    pub geo: GeoDb,
    pub services: ServiceDb,
    pub tcp: TcpConfig,
    pub idle_timeout_us: u64,
    anon: Anonymizer,
    cache: HashMap<Ipv4Addr, AnonIpv4>,
}

impl Context {
    pub fn new(
        prefixes: PrefixConfig,
        geo: GeoDb,
        services: ServiceDb,
        tcp: TcpConfig,
        idle_timeout_us: u64,
        anon: Anonymizer,
    ) -> Context {
        Context { prefixes, geo, services, tcp, idle_timeout_us, anon, cache: HashMap::new() }
    }

    /// Loads databases named by `cfg`. Fails with `RefusesRawAddresses`
    /// when no key is available, since every output carries addresses.
    pub fn from_config(cfg: &RunConfig) -> Result<Context, PipelineError> {
        let key = cfg.resolve_key()?.ok_or(ReportError::RefusesRawAddresses)?;
        let prefixes = cfg.prefix_config()?;
        let geo = match &cfg.geo_db {
            Some(p) => load_geo_db(p)?,
            None => GeoDb::default(),
        };
        let services = match &cfg.services {
            Some(p) => load_services_db(p)?,
            None => ServiceDb::default(),
        };
        Ok(Context::new(prefixes, geo, services, cfg.tcp_config(), cfg.idle_timeout_us(), Anonymizer::new(&key)))
    }

    fn anon(&mut self, a: Ipv4Addr) -> AnonIpv4 {
        let anon = &self.anon;
        *self.cache.entry(a).or_insert_with(|| AnonIpv4::new(anon, a))
    }

    fn scope_and_continent(&self, src: Ipv4Addr, dst: Ipv4Addr) -> (String, String) {
        let scope = self.prefixes.classify_scope(src, dst);
        let continent = if scope == Scope::Wan {
            lookup_continent(self.prefixes.remote_endpoint(src, dst), &self.geo).label().to_string()
        } else {
            String::new()
        };
        (scope.label().to_string(), continent)
    }

    /// Export row of a finished flow, with anonymized endpoints.
    pub fn flow_row(&mut self, flow: &FlowRecord) -> FlowRow {
        let (ini, resp) = (flow.initiator(), flow.responder());
        let (scope_fwd, continent_fwd) = self.scope_and_continent(ini.0, resp.0);
        let (scope_rev, continent_rev) = self.scope_and_continent(resp.0, ini.0);
        let m = flow_metrics(flow);
        let mut row = FlowRow {
            src_addr: self.anon(ini.0),
            src_port: ini.1,
            dst_addr: self.anon(resp.0),
            dst_port: resp.1,
            protocol: flow.key.protocol,
            first_ts_us: flow.first_ts.micros(),
            duration_us: flow.duration_us(),
            packets_fwd: flow.packets_fwd,
            packets_rev: flow.packets_rev,
            bytes_fwd: flow.bytes_fwd,
            bytes_rev: flow.bytes_rev,
            packets: m.length_pkts,
            bytes: m.bytes_total,
            mean_rate_bps: m.mean_rate_bits_per_s,
            bidirectional: flow.bidirectional(),
            end_reason: flow.end_reason.map(|r| r.label()).unwrap_or("active").to_string(),
            transport: classify_transport(flow.key.protocol).label(),
            scope_fwd,
            scope_rev,
            continent_fwd,
            continent_rev,
            ..FlowRow::default()
        };
        let Some(st) = flow.tcp_state().filter(|_| flow.is_tcp()) else {
            return row;
        };
        row.service = classify_service(flow, &self.services).label().to_string();
        row.server_port = Some(server_port(flow, &self.services));
        row.data_in_order = st.data_count(crate::tcp::DataClass::InOrder);
        row.data_retx_plain = st.data_count(crate::tcp::DataClass::RetransmissionPlain);
        row.data_retx_fast = st.data_count(crate::tcp::DataClass::RetransmissionFast);
        row.data_retx_spurious = st.data_count(crate::tcp::DataClass::RetransmissionSpurious);
        row.data_out_of_order = st.data_count(crate::tcp::DataClass::OutOfOrder);
        row.late_fillers = st.late_fillers;
        for e in &flow.events {
            match e.kind {
                EventKind::LostSegmentInferred { gap_bytes } => {
                    row.lost_segments += 1;
                    row.lost_bytes += gap_bytes;
                }
                EventKind::DuplicateAck { .. } => row.dup_acks += 1,
                EventKind::WindowReduction { .. } => row.window_reductions += 1,
                EventKind::ZeroWindow => row.zero_windows += 1,
                _ => {}
            }
        }
        row.ece_packets = st.flag_counts[6];
        row.cwr_packets = st.flag_counts[7];
        let cong = derive_congestion_events(&flow.events, &self.tcp);
        row.congestion_flag = cong.flag_events();
        row.congestion_correlated = cong.correlated_events();
        let (retries, label) = match flow.establishment {
            EstablishmentOutcome::Clean => (0, "clean"),
            EstablishmentOutcome::SynRetry { retries } => (retries, "syn_retry"),
            EstablishmentOutcome::Failure { reason } => (0, reason.label()),
        };
        row.syn_retries = retries;
        row.establishment = label.to_string();
        let rtt = estimate_rtt(st);
        row.rtt_syn_side_us = rtt.handshake_syn_side_us;
        row.rtt_ack_side_us = rtt.handshake_ack_side_us;
        row.rtt_handshake_us = rtt.handshake_total_us;
        row.rtt_samples = rtt.ack_samples_us.len() as u64;
        row.rtt_min_us = rtt.summary.map(|s| s.min_us);
        row.rtt_median_us = rtt.summary.map(|s| s.median_us);
        row.rtt_mean_us = rtt.summary.map(|s| s.mean_us);
        row
    }

    pub fn event_rows(&mut self, flow: &FlowRecord) -> Vec<EventRow> {
        if flow.events.is_empty() {
            return Vec::new();
        }
        let (ini, resp) = (flow.initiator(), flow.responder());
        let (a, b) = (self.anon(ini.0), self.anon(resp.0));
        flow.events
            .iter()
            .map(|e| EventRow {
                ts_us: e.ts.micros(),
                kind: e.kind.name().to_string(),
                direction: e.dir.label().to_string(),
                detail: e.kind.detail(),
                seq: e.seq,
                src_addr: a,
                src_port: ini.1,
                dst_addr: b,
                dst_port: resp.1,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TraceResult {
    pub rows: Vec<FlowRow>,
    pub events: Vec<EventRow>,
    pub ingest: IngestStats,
    pub counters: FlowCounters,
}

fn file_info(path: &Path) -> Result<TraceInfo, PipelineError> {
    let io_err = |source| PipelineError::Io { path: path.to_path_buf(), source };
    let mut f = File::open(path).map_err(io_err)?;
    let mut h = Sha256::new();
    let bytes = io::copy(&mut f, &mut h).map_err(io_err)?;
    Ok(TraceInfo {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: hex::encode(h.finalize()),
        bytes,
    })
}

/// Runs ingest, flow reconstruction and TCP analysis over one trace.
pub fn analyze_trace(path: &Path, ctx: &mut Context) -> Result<TraceResult, PipelineError> {
    let ingest_err = |source| PipelineError::Ingest { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    let (_, mut reader) = TraceReader::new(BufReader::new(file)).map_err(ingest_err)?;
    let mut table = FlowTable::new(ctx.idle_timeout_us, ctx.tcp);
    let mut out = TraceResult::default();
    let mut next_sweep = None;
    let mut last_ts = None;
    let finished = |flows: Vec<FlowRecord>, ctx: &mut Context, out: &mut TraceResult| {
        for f in flows {
            out.rows.push(ctx.flow_row(&f));
            out.events.extend(ctx.event_rows(&f));
        }
    };
    while let Some(pkt) = reader.next_packet().map_err(ingest_err)? {
        table.update_flow(&pkt);
        last_ts = Some(pkt.ts);
        if next_sweep.is_none_or(|t| pkt.ts >= t) {
            let done = table.expire_flows(pkt.ts);
            finished(done, ctx, &mut out);
            next_sweep = Some(pkt.ts.plus_micros(SWEEP_INTERVAL_US));
        }
    }
    if let Some(ts) = last_ts {
        let done = table.expire_flows(ts);
        finished(done, ctx, &mut out);
        let done = table.finish_all(ts);
        finished(done, ctx, &mut out);
    }
    out.ingest = *reader.stats();
    out.counters = *table.counters();
    Ok(out)
}

/// Full analysis of every configured trace, in input order.
pub fn run_analysis(cfg: &RunConfig) -> Result<ReportInput, PipelineError> {
    cfg.validate(true)?;
    let mut ctx = Context::from_config(cfg)?;
    let mut input = ReportInput { events: Some(Vec::new()), ..ReportInput::default() };
    let mut ingest = IngestStats::default();
    let mut counters = FlowCounters::default();
    for path in &cfg.inputs {
        input.traces.push(file_info(path)?);
        let r = analyze_trace(path, &mut ctx)?;
        log::info!("{}: {} packets, {} flows", path.display(), r.ingest.packets_total, r.rows.len());
        input.rows.extend(r.rows);
        input.events.as_mut().expect("set above").extend(r.events);
        ingest.merge(&r.ingest);
        counters.merge(&r.counters);
    }
    input.ingest = Some(ingest);
    input.flow_counters = Some(counters);
    Ok(input)
}

/// Re-aggregation input from earlier `flows.csv` exports.
pub fn load_exports(paths: &[PathBuf]) -> Result<ReportInput, PipelineError> {
    let mut input = ReportInput::default();
    for p in paths {
        input.traces.push(file_info(p)?);
        input.rows.extend(crate::report::read_flow_export(p)?);
    }
    Ok(input)
}
