//! Classic pcap ingestion and Ethernet/IPv4/TCP/UDP header decoding.
//!
//! [`PcapReader`] yields raw records in file order and is what the trace
//! rewriter uses. [`TraceReader`] sits on top of it, decodes every frame into a
//! [`PacketRecord`], keeps [`IngestStats`] and runs the records through a small
//! timestamp reorder buffer so downstream code sees non-decreasing time.

mod decode;
mod options;
mod pcap;
mod reorder;

use std::fmt;
use std::net::Ipv4Addr;

pub use decode::{
    decode_frame, ipv4_offset, locate_ipv4, FrameKind, Ipv4Location, PROTO_ICMP, PROTO_IGMP,
    PROTO_TCP, PROTO_UDP,
};
pub use options::{decode_tcp_options, MalformedOption, TcpOptions};
pub use pcap::{
    open_trace, CaptureMeta, LinkType, PcapReader, PcapWriter, RawFrame, TimestampResolution,
    TraceReader, PCAP_MAGIC_MICROS, PCAP_MAGIC_NANOS,
};
pub use reorder::{ReorderBuffer, REORDER_CAPACITY};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("not a pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("unsupported link type {0} (only Ethernet and raw IP are decoded)")]
    UnsupportedLinkType(u32),
    #[error("file too short for a pcap global header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("corrupt packet record at byte offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },
    #[error("snap length must be positive")]
    ZeroSnapLength,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Capture time in microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as u64)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Microseconds elapsed since `earlier`, zero if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    pub fn plus_micros(self, us: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(us))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// TCP control bits, in wire order (bit 0 = FIN ... bit 7 = CWR).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
    pub const URG: u8 = 0x20;
    pub const ECE: u8 = 0x40;
    pub const CWR: u8 = 0x80;

    pub const NAMES: [&'static str; 8] = ["FIN", "SYN", "RST", "PSH", "ACK", "URG", "ECE", "CWR"];

    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }
    pub fn fin(self) -> bool {
        self.has(Self::FIN)
    }
    pub fn syn(self) -> bool {
        self.has(Self::SYN)
    }
    pub fn rst(self) -> bool {
        self.has(Self::RST)
    }
    pub fn ack(self) -> bool {
        self.has(Self::ACK)
    }
    pub fn ece(self) -> bool {
        self.has(Self::ECE)
    }
    pub fn cwr(self) -> bool {
        self.has(Self::CWR)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, name) in Self::NAMES.iter().enumerate() {
            if self.0 & (1 << i) != 0 {
                if !first {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        if first {
            f.write_str("-")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    /// Raw advertised window, before any window-scale shift.
    pub window: u16,
    pub header_length: u8,
    pub options: TcpOptions,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Tcp(TcpHeader),
    Udp { src_port: u16, dst_port: u16 },
    /// ICMP, IGMP, other protocols, and non-first IP fragments.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub ts: Timestamp,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub ip_total_length: u16,
    pub ip_header_length: u8,
    /// Non-first fragment: counted toward volume, never attached to a flow.
    pub later_fragment: bool,
    pub transport: Transport,
    pub payload_length: u32,
    /// Fewer bytes captured than the IP total length announces.
    pub truncated: bool,
}

impl PacketRecord {
    pub fn tcp(&self) -> Option<&TcpHeader> {
        match &self.transport {
            Transport::Tcp(h) => Some(h),
            _ => None,
        }
    }

    pub fn ports(&self) -> Option<(u16, u16)> {
        match &self.transport {
            Transport::Tcp(h) => Some((h.src_port, h.dst_port)),
            Transport::Udp { src_port, dst_port } => Some((*src_port, *dst_port)),
            Transport::None => None,
        }
    }
}

/// Per-trace decode accounting.
///
/// `packets_total` always equals the sum of the five category counters; the
/// remaining fields are diagnostics layered on top of the IPv4 category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestStats {
    pub packets_total: u64,
    pub packets_ipv4: u64,
    pub packets_ipv6_skipped: u64,
    pub packets_non_ip_skipped: u64,
    /// Frames cut before the end of their IPv4 or transport header.
    pub packets_truncated: u64,
    pub decode_errors: u64,
    /// Sum of IPv4 total length over decoded packets.
    pub ipv4_bytes: u64,
    /// IPv4 records whose payload was cut by the snap length.
    pub ipv4_partial_capture: u64,
    pub ipv4_later_fragments: u64,
    pub monotonicity_violations: u64,
}

impl IngestStats {
    pub fn record(&mut self, kind: &FrameKind) {
        self.packets_total += 1;
        match kind {
            FrameKind::Ipv4(rec) => {
                self.packets_ipv4 += 1;
                self.ipv4_bytes += u64::from(rec.ip_total_length);
                if rec.truncated {
                    self.ipv4_partial_capture += 1;
                }
                if rec.later_fragment {
                    self.ipv4_later_fragments += 1;
                }
            }
            FrameKind::Ipv6 => self.packets_ipv6_skipped += 1,
            FrameKind::NonIp => self.packets_non_ip_skipped += 1,
            FrameKind::Truncated => self.packets_truncated += 1,
            FrameKind::Malformed(_) => self.decode_errors += 1,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.packets_total
            == self.packets_ipv4
                + self.packets_ipv6_skipped
                + self.packets_non_ip_skipped
                + self.packets_truncated
                + self.decode_errors
    }

    pub fn merge(&mut self, other: &IngestStats) {
        self.packets_total += other.packets_total;
        self.packets_ipv4 += other.packets_ipv4;
        self.packets_ipv6_skipped += other.packets_ipv6_skipped;
        self.packets_non_ip_skipped += other.packets_non_ip_skipped;
        self.packets_truncated += other.packets_truncated;
        self.decode_errors += other.decode_errors;
        self.ipv4_bytes += other.ipv4_bytes;
        self.ipv4_partial_capture += other.ipv4_partial_capture;
        self.ipv4_later_fragments += other.ipv4_later_fragments;
        self.monotonicity_violations += other.monotonicity_violations;
    }
}
