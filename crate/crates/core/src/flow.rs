//! Bidirectional flow reconstruction.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;

use crate::ingest::{PacketRecord, TcpFlags, Timestamp, Transport};
use crate::tcp::{
    detect_establishment_problem, Direction, EstablishmentOutcome, TcpConfig, TcpEvent, TcpFlowState,
};

pub const DEFAULT_IDLE_TIMEOUT_US: u64 = 60_000_000;
/// Time a closed TCP flow stays open for retransmitted FINs and final ACKs.
pub const CLOSE_LINGER_US: u64 = 2_000_000;

/// Canonical 5-tuple: the numerically smaller (address, port) endpoint
/// comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub addr_lo: Ipv4Addr,
    pub port_lo: u16,
    pub addr_hi: Ipv4Addr,
    pub port_hi: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), protocol: u8) -> FlowKey {
        let (lo, hi) = if src <= dst { (src, dst) } else { (dst, src) };
        FlowKey { addr_lo: lo.0, port_lo: lo.1, addr_hi: hi.0, port_hi: hi.1, protocol }
    }

    pub fn lo(&self) -> (Ipv4Addr, u16) {
        (self.addr_lo, self.port_lo)
    }

    pub fn hi(&self) -> (Ipv4Addr, u16) {
        (self.addr_hi, self.port_hi)
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{} <-> {}:{} proto {}", self.addr_lo, self.port_lo, self.addr_hi, self.port_hi, self.protocol)
    }
}

/// Key of a packet; protocols without ports use (0, 0).
pub fn flow_key(pkt: &PacketRecord) -> FlowKey {
    let (sp, dp) = pkt.ports().unwrap_or((0, 0));
    FlowKey::new((pkt.src, sp), (pkt.dst, dp), pkt.protocol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EndReason {
    IdleTimeout,
    /// FIN in both directions or RST.
    Closed,
    /// Still active when the trace ended.
    Flushed,
}

impl EndReason {
    pub fn label(self) -> &'static str {
        match self {
            EndReason::IdleTimeout => "idle",
            EndReason::Closed => "closed",
            EndReason::Flushed => "flushed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub key: FlowKey,
    /// The initiator is the `lo` endpoint of the key.
    pub initiator_is_lo: bool,
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    pub packets_fwd: u64,
    pub packets_rev: u64,
    pub bytes_fwd: u64,
    pub bytes_rev: u64,
    pub tcp: Option<Box<TcpFlowState>>,
    pub events: Vec<TcpEvent>,
    pub closed_at: Option<Timestamp>,
    pub end_reason: Option<EndReason>,
    pub establishment: EstablishmentOutcome,
}

impl FlowRecord {
    fn new(key: FlowKey, pkt: &PacketRecord) -> FlowRecord {
        let sport = pkt.ports().map_or(0, |p| p.0);
        let sender_is_lo = (pkt.src, sport) == key.lo();
        // a SYN/ACK seen first still names the connecting side
        let synack = pkt.tcp().is_some_and(|h| h.flags.syn() && h.flags.ack());
        FlowRecord {
            key,
            initiator_is_lo: sender_is_lo != synack,
            first_ts: pkt.ts,
            last_ts: pkt.ts,
            packets_fwd: 0,
            packets_rev: 0,
            bytes_fwd: 0,
            bytes_rev: 0,
            tcp: None,
            events: Vec::new(),
            closed_at: None,
            end_reason: None,
            establishment: EstablishmentOutcome::Clean,
        }
    }

    pub fn initiator(&self) -> (Ipv4Addr, u16) {
        if self.initiator_is_lo { self.key.lo() } else { self.key.hi() }
    }

    pub fn responder(&self) -> (Ipv4Addr, u16) {
        if self.initiator_is_lo { self.key.hi() } else { self.key.lo() }
    }

    pub fn direction_of(&self, pkt: &PacketRecord) -> Direction {
        let sport = pkt.ports().map_or(0, |p| p.0);
        if (pkt.src, sport) == self.initiator() { Direction::Fwd } else { Direction::Rev }
    }

    pub fn length(&self) -> u64 {
        self.packets_fwd + self.packets_rev
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_fwd + self.bytes_rev
    }

    pub fn duration_us(&self) -> u64 {
        self.last_ts.since(self.first_ts)
    }

    pub fn bidirectional(&self) -> bool {
        self.packets_fwd > 0 && self.packets_rev > 0
    }

    pub fn is_tcp(&self) -> bool {
        self.key.protocol == crate::ingest::PROTO_TCP
    }

    /// Responder port when a SYN or SYN/ACK was observed.
    pub fn handshake_server_port(&self) -> Option<u16> {
        let hs = &self.tcp.as_ref()?.handshake;
        (hs.first_syn.is_some() || hs.synack.is_some()).then(|| self.responder().1)
    }

    pub fn tcp_state(&self) -> Option<&TcpFlowState> {
        self.tcp.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    pub length_pkts: u64,
    pub bytes_total: u64,
    pub duration_s: f64,
    /// Undefined for zero-duration flows.
    pub mean_rate_bits_per_s: Option<f64>,
}

pub fn flow_metrics(flow: &FlowRecord) -> FlowMetrics {
    let dur = flow.duration_us();
    let bytes = flow.bytes();
    FlowMetrics {
        length_pkts: flow.length(),
        bytes_total: bytes,
        duration_s: dur as f64 / 1e6,
        mean_rate_bits_per_s: (dur > 0).then(|| 8.0 * bytes as f64 * 1e6 / dur as f64),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FlowCounters {
    pub flows_created: u64,
    pub flows_expired: u64,
    pub flows_fin_closed: u64,
    pub flows_flushed: u64,
    /// IPv4 packets and bytes attached to some flow.
    pub packets_assigned: u64,
    pub bytes_assigned: u64,
    /// Non-first fragments, counted for volume only.
    pub fragments_unassigned: u64,
}

impl FlowCounters {
    pub fn merge(&mut self, o: &FlowCounters) {
        self.flows_created += o.flows_created;
        self.flows_expired += o.flows_expired;
        self.flows_fin_closed += o.flows_fin_closed;
        self.flows_flushed += o.flows_flushed;
        self.packets_assigned += o.packets_assigned;
        self.bytes_assigned += o.bytes_assigned;
        self.fragments_unassigned += o.fragments_unassigned;
    }
}

#[derive(Debug, Clone)]
pub struct FlowTable {
    active: HashMap<FlowKey, FlowRecord>,
    /// Flows already finished but not yet handed out.
    ready: Vec<FlowRecord>,
    finished: u64,
    idle_timeout_us: u64,
    tcp_cfg: TcpConfig,
    counters: FlowCounters,
}

impl FlowTable {
    pub fn new(idle_timeout_us: u64, tcp_cfg: TcpConfig) -> FlowTable {
        FlowTable {
            active: HashMap::new(),
            ready: Vec::new(),
            finished: 0,
            idle_timeout_us,
            tcp_cfg,
            counters: FlowCounters::default(),
        }
    }

    pub fn idle_timeout_us(&self) -> u64 {
        self.idle_timeout_us
    }

    pub fn counters(&self) -> &FlowCounters {
        &self.counters
    }

    pub fn active_len(&self) -> usize {
        self.active.len()
    }

    /// Flows finished so far, including those not yet returned.
    pub fn finished_len(&self) -> u64 {
        self.finished
    }

    pub fn get(&self, key: &FlowKey) -> Option<&FlowRecord> {
        self.active.get(key)
    }

    /// Attaches `pkt` to its flow, creating one if needed. Returns the key
    /// and whether the flow is new; non-first fragments attach to nothing.
    pub fn update_flow(&mut self, pkt: &PacketRecord) -> Option<(FlowKey, bool)> {
        if pkt.later_fragment {
            self.counters.fragments_unassigned += 1;
            return None;
        }
        let key = flow_key(pkt);
        let mut is_new = true;
        if let Some(rec) = self.active.get(&key) {
            let idle = pkt.ts.since(rec.last_ts) >= self.idle_timeout_us;
            let reuse = rec.closed_at.is_some_and(|c| is_pure_syn(pkt) || pkt.ts.since(c) > CLOSE_LINGER_US);
            if idle || reuse {
                let rec = self.active.remove(&key).expect("present");
                let reason = if idle && rec.closed_at.is_none() { EndReason::IdleTimeout } else { EndReason::Closed };
                self.finish(rec, reason, pkt.ts);
            } else {
                is_new = false;
            }
        }
        if is_new {
            self.counters.flows_created += 1;
        }
        let cfg = self.tcp_cfg;
        let rec = self.active.entry(key).or_insert_with(|| FlowRecord::new(key, pkt));
        let dir = rec.direction_of(pkt);
        let bytes = u64::from(pkt.ip_total_length);
        match dir {
            Direction::Fwd => {
                rec.packets_fwd += 1;
                rec.bytes_fwd += bytes;
            }
            Direction::Rev => {
                rec.packets_rev += 1;
                rec.bytes_rev += bytes;
            }
        }
        rec.last_ts = rec.last_ts.max(pkt.ts);
        if let Transport::Tcp(_) = pkt.transport {
            let st = rec.tcp.get_or_insert_with(Default::default);
            let ev = st.track(pkt, dir, &cfg);
            rec.events.extend(ev);
            if rec.closed_at.is_none() && st.closed() {
                rec.closed_at = Some(pkt.ts);
            }
        }
        self.counters.packets_assigned += 1;
        self.counters.bytes_assigned += bytes;
        Some((key, is_new))
    }

    fn finish(&mut self, mut rec: FlowRecord, reason: EndReason, now: Timestamp) {
        match reason {
            EndReason::IdleTimeout => self.counters.flows_expired += 1,
            EndReason::Closed => self.counters.flows_fin_closed += 1,
            EndReason::Flushed => self.counters.flows_flushed += 1,
        }
        rec.end_reason = Some(reason);
        if let Some(st) = rec.tcp.as_deref() {
            let outcome = detect_establishment_problem(st, reason == EndReason::IdleTimeout, now, &self.tcp_cfg);
            if let Some(ev) = crate::tcp::establishment_event(outcome, st, now) {
                rec.events.push(ev);
            }
            rec.establishment = outcome;
        }
        self.finished += 1;
        self.ready.push(rec);
    }

    fn take_ready(&mut self) -> Vec<FlowRecord> {
        let mut out = std::mem::take(&mut self.ready);
        out.sort_by_key(|f| (f.first_ts, f.key));
        out
    }

    /// Finishes every flow idle for at least the timeout, or closed and past
    /// its linger, at time `now`. Returned flows (including any split off by
    /// `update_flow`) are ordered by first timestamp, then key.
    pub fn expire_flows(&mut self, now: Timestamp) -> Vec<FlowRecord> {
        let idle = self.idle_timeout_us;
        let due: Vec<(FlowKey, EndReason)> = self
            .active
            .iter()
            .filter_map(|(k, r)| {
                if r.closed_at.is_some_and(|c| now.since(c) >= CLOSE_LINGER_US) {
                    Some((*k, EndReason::Closed))
                } else if r.last_ts.plus_micros(idle) <= now {
                    Some((*k, EndReason::IdleTimeout))
                } else {
                    None
                }
            })
            .collect();
        for (k, reason) in due {
            let rec = self.active.remove(&k).expect("present");
            self.finish(rec, reason, now);
        }
        self.take_ready()
    }

    /// Finishes everything at end of trace.
    pub fn finish_all(&mut self, now: Timestamp) -> Vec<FlowRecord> {
        let keys: Vec<FlowKey> = self.active.keys().copied().collect();
        for k in keys {
            let rec = self.active.remove(&k).expect("present");
            let reason = if rec.closed_at.is_some() { EndReason::Closed } else { EndReason::Flushed };
            self.finish(rec, reason, now);
        }
        self.take_ready()
    }
}

fn is_pure_syn(pkt: &PacketRecord) -> bool {
    pkt.tcp().is_some_and(|h| h.flags.0 & (TcpFlags::SYN | TcpFlags::ACK) == TcpFlags::SYN)
}
