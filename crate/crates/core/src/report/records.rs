use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::anon::{Anonymizer, Prf};

/// An address that has been through the anonymizer. Report writers only
/// accept this type, so raw addresses cannot reach an output file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnonIpv4(Ipv4Addr);

impl Default for AnonIpv4 {
    fn default() -> Self {
        AnonIpv4(Ipv4Addr::UNSPECIFIED)
    }
}

impl AnonIpv4 {
    pub fn new<P: Prf>(anon: &Anonymizer<P>, raw: Ipv4Addr) -> AnonIpv4 {
        AnonIpv4(anon.anonymize(raw))
    }

    /// Wraps an address read back from an earlier export.
    pub fn from_export(addr: Ipv4Addr) -> AnonIpv4 {
        AnonIpv4(addr)
    }

    pub fn addr(self) -> Ipv4Addr {
        self.0
    }
}

impl fmt::Display for AnonIpv4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One finished flow as exported to `flows.csv`; column order is the field
/// order. Endpoints are (initiator, responder). Per-direction scope and
/// continent let packet-level tables be rebuilt from the export alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub src_addr: AnonIpv4,
    pub src_port: u16,
    pub dst_addr: AnonIpv4,
    pub dst_port: u16,
    pub protocol: u8,
    pub first_ts_us: u64,
    pub duration_us: u64,
    pub packets_fwd: u64,
    pub packets_rev: u64,
    pub bytes_fwd: u64,
    pub bytes_rev: u64,
    pub packets: u64,
    pub bytes: u64,
    pub mean_rate_bps: Option<f64>,
    pub bidirectional: bool,
    pub end_reason: String,
    pub transport: String,
    pub scope_fwd: String,
    pub scope_rev: String,
    /// Empty unless that direction is WAN.
    pub continent_fwd: String,
    pub continent_rev: String,
    /// TCP only from here on; zero or empty otherwise.
    pub service: String,
    pub server_port: Option<u16>,
    pub data_in_order: u64,
    pub data_retx_plain: u64,
    pub data_retx_fast: u64,
    pub data_retx_spurious: u64,
    pub data_out_of_order: u64,
    pub late_fillers: u64,
    pub lost_segments: u64,
    pub lost_bytes: u64,
    pub dup_acks: u64,
    pub window_reductions: u64,
    pub zero_windows: u64,
    pub ece_packets: u64,
    pub cwr_packets: u64,
    pub congestion_flag: u32,
    pub congestion_correlated: u32,
    pub syn_retries: u32,
    pub establishment: String,
    pub rtt_syn_side_us: Option<u64>,
    pub rtt_ack_side_us: Option<u64>,
    pub rtt_handshake_us: Option<u64>,
    pub rtt_samples: u64,
    pub rtt_min_us: Option<u64>,
    pub rtt_median_us: Option<f64>,
    pub rtt_mean_us: Option<f64>,
}

impl FlowRow {
    pub fn is_tcp(&self) -> bool {
        self.protocol == crate::ingest::PROTO_TCP
    }

    pub fn data_packets(&self) -> u64 {
        self.data_in_order + self.data_retx_plain + self.data_retx_fast + self.data_retx_spurious + self.data_out_of_order
    }
}

/// One TCP event as exported to `events.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub ts_us: u64,
    pub kind: String,
    pub direction: String,
    pub detail: String,
    pub seq: u32,
    pub src_addr: AnonIpv4,
    pub src_port: u16,
    pub dst_addr: AnonIpv4,
    pub dst_port: u16,
}
