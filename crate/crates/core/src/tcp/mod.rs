//! Per-flow TCP performance tracking.
//!
//! [`TcpFlowState::track`] is fed every TCP packet of one flow in timestamp
//! order. It maintains per-direction sequence state and emits [`TcpEvent`]s:
//! retransmissions (plain, fast, spurious), inferred upstream losses,
//! reordering, duplicate ACKs, window reductions, ECN flag observations and
//! SYN retries. Post-flow analyses (congestion evidence, RTT, connection
//! establishment) live in [`analysis`].

pub mod analysis;
mod seq;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use analysis::{
    derive_congestion_events, detect_establishment_problem, estimate_rtt, CongestionEvidence,
    establishment_event, CongestionReport, EstablishmentOutcome, RttEstimate, RttSummary,
};
pub use seq::{seq_lt, RangeSet, SeqSpace};

use crate::ingest::{PacketRecord, TcpFlags, TcpHeader, Timestamp};

/// Pending RTT edges kept per direction; older ones are dropped.
const MAX_PENDING_EDGES: usize = 4096;
const MAX_OPEN_GAPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Initiator to responder.
    Fwd,
    Rev,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Fwd => 0,
            Direction::Rev => 1,
        }
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::Fwd => Direction::Rev,
            Direction::Rev => Direction::Fwd,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Fwd => "fwd",
            Direction::Rev => "rev",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureReason {
    NoAnswer,
    Refused,
}

impl FailureReason {
    pub fn label(self) -> &'static str {
        match self {
            FailureReason::NoAnswer => "no_answer",
            FailureReason::Refused => "refused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    RetransmissionPlain,
    RetransmissionFast,
    RetransmissionSpurious,
    /// Bytes `[from, to)` (relative sequence) skipped by the sender's stream.
    LostSegmentInferred { gap_bytes: u64 },
    OutOfOrder,
    DuplicateAck { count: u32 },
    /// Scaled advertised window went down.
    WindowReduction { from_bytes: u64, to_bytes: u64 },
    ZeroWindow,
    /// `on_syn` marks the ECN-setup handshake rather than a congestion echo.
    EceSeen { on_syn: bool },
    CwrSeen { on_syn: bool },
    SynRetry,
    EstablishmentFailure { reason: FailureReason },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::RetransmissionPlain => "RetransmissionPlain",
            EventKind::RetransmissionFast => "RetransmissionFast",
            EventKind::RetransmissionSpurious => "RetransmissionSpurious",
            EventKind::LostSegmentInferred { .. } => "LostSegmentInferred",
            EventKind::OutOfOrder => "OutOfOrder",
            EventKind::DuplicateAck { .. } => "DuplicateAck",
            EventKind::WindowReduction { .. } => "WindowReduction",
            EventKind::ZeroWindow => "ZeroWindow",
            EventKind::EceSeen { .. } => "EceSeen",
            EventKind::CwrSeen { .. } => "CwrSeen",
            EventKind::SynRetry => "SynRetry",
            EventKind::EstablishmentFailure { .. } => "EstablishmentFailure",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            EventKind::LostSegmentInferred { gap_bytes } => format!("gap_bytes={gap_bytes}"),
            EventKind::DuplicateAck { count } => format!("dup#{count}"),
            EventKind::WindowReduction { from_bytes, to_bytes } => format!("{from_bytes}->{to_bytes}"),
            EventKind::EceSeen { on_syn } | EventKind::CwrSeen { on_syn } => {
                if *on_syn { "syn".into() } else { String::new() }
            }
            EventKind::EstablishmentFailure { reason } => reason.label().into(),
            _ => String::new(),
        }
    }

    pub fn is_retransmission(&self) -> bool {
        matches!(
            self,
            EventKind::RetransmissionPlain | EventKind::RetransmissionFast | EventKind::RetransmissionSpurious
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpEvent {
    pub kind: EventKind,
    pub ts: Timestamp,
    pub dir: Direction,
    /// Raw sequence (or ACK) number the event refers to.
    pub seq: u32,
}

/// Exactly one class per data-bearing TCP packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DataClass {
    InOrder,
    RetransmissionPlain,
    RetransmissionFast,
    RetransmissionSpurious,
    OutOfOrder,
}

impl DataClass {
    pub const ALL: [DataClass; 5] = [
        DataClass::RetransmissionFast,
        DataClass::RetransmissionSpurious,
        DataClass::RetransmissionPlain,
        DataClass::OutOfOrder,
        DataClass::InOrder,
    ];

    pub fn index(self) -> usize {
        match self {
            DataClass::InOrder => 0,
            DataClass::RetransmissionPlain => 1,
            DataClass::RetransmissionFast => 2,
            DataClass::RetransmissionSpurious => 3,
            DataClass::OutOfOrder => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DataClass::InOrder => "InOrder",
            DataClass::RetransmissionPlain => "RetransmissionPlain",
            DataClass::RetransmissionFast => "RetransmissionFast",
            DataClass::RetransmissionSpurious => "RetransmissionSpurious",
            DataClass::OutOfOrder => "OutOfOrder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpConfig {
    /// A never-seen range arriving this soon after the gap it fills is
    /// reordering; later fillers are not flagged.
    pub reorder_window_us: u64,
    pub correlation_window_us: u64,
    pub syn_answer_timeout_us: u64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            reorder_window_us: 3_000,
            correlation_window_us: 1_000_000,
            syn_answer_timeout_us: 30_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PendingEdge {
    edge: u64,
    sent: Timestamp,
    retransmitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Gap {
    start: u64,
    end: u64,
    opened: Timestamp,
}

/// Sequence state of one direction (the sender's view).
#[derive(Debug, Clone, Default)]
pub struct TcpDirState {
    pub isn: Option<u32>,
    space: Option<SeqSpace>,
    /// One past the highest sequence number seen (SYN and FIN included).
    pub next_seq: Option<u64>,
    /// Highest cumulative ACK received from the peer for this direction's data.
    pub acked_upto: Option<u64>,
    pub seen_ranges: RangeSet,
    pub last_adv_window: Option<u64>,
    pub window_scale_offered: Option<u8>,
    pub window_scale: u8,
    /// Consecutive duplicate ACKs from the peer, and the ACK value repeated.
    pub dup_ack_count: u32,
    pub dup_ack_value: Option<u64>,
    pending_rtt: VecDeque<PendingEdge>,
    gaps: Vec<Gap>,
    // what this direction last sent, for duplicate-ACK detection
    last_ack_sent: Option<u32>,
    last_raw_window: Option<u16>,
    pub fin_seen: bool,
    pub rst_seen: bool,
}

impl TcpDirState {
    fn space(&mut self, first: u32) -> &mut SeqSpace {
        self.space.get_or_insert_with(|| SeqSpace::new(first))
    }

    /// Relative position of `x` (0 = ISN when known).
    pub fn relative(&self, x: u64) -> u64 {
        match (self.isn, self.space) {
            (Some(isn), Some(s)) => x.saturating_sub(s.peek(isn)),
            _ => x,
        }
    }

    /// Unwrapped position of a raw sequence number.
    pub fn unwrap_seq(&mut self, x: u32) -> u64 {
        self.space(x).unwrap(x)
    }
}

/// Retransmission kind for a segment whose range was already captured.
pub fn classify_retransmission(state: &TcpDirState, start: u64, end: u64) -> DataClass {
    if state.acked_upto.is_some_and(|a| end <= a) {
        DataClass::RetransmissionSpurious
    } else if state.dup_ack_count >= 3 && state.dup_ack_value == Some(start) {
        DataClass::RetransmissionFast
    } else {
        DataClass::RetransmissionPlain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapVerdict {
    /// The segment jumped ahead; bytes in between were never captured.
    LostSegmentInferred { gap_start: u64, gap_end: u64 },
    OutOfOrder,
    /// Filled a gap after the reorder window: no event.
    LateFiller,
    InOrder,
}

/// Gap and reordering check for a never-seen data range. Updates `next_seq`
/// and the open-gap list.
pub fn detect_gap_and_ooo(
    state: &mut TcpDirState,
    start: u64,
    end: u64,
    ts: Timestamp,
    reorder_window_us: u64,
) -> GapVerdict {
    let Some(next) = state.next_seq else {
        state.next_seq = Some(end);
        return GapVerdict::InOrder;
    };
    let verdict = if start > next {
        if state.gaps.len() >= MAX_OPEN_GAPS {
            state.gaps.remove(0);
        }
        state.gaps.push(Gap { start: next, end: start, opened: ts });
        GapVerdict::LostSegmentInferred { gap_start: next, gap_end: start }
    } else if start < next {
        let hit = state.gaps.iter().position(|g| start < g.end && end > g.start);
        match hit {
            Some(i) => {
                let g = state.gaps[i];
                let verdict = if ts.since(g.opened) <= reorder_window_us {
                    GapVerdict::OutOfOrder
                } else {
                    GapVerdict::LateFiller
                };
                state.gaps.remove(i);
                if g.start < start {
                    state.gaps.push(Gap { start: g.start, end: start, opened: g.opened });
                }
                if end < g.end {
                    state.gaps.push(Gap { start: end, end: g.end, opened: g.opened });
                }
                verdict
            }
            None => GapVerdict::LateFiller,
        }
    } else {
        GapVerdict::InOrder
    };
    state.next_seq = Some(next.max(end));
    verdict
}

/// Window-reduction check for an ACK-bearing, non-SYN segment.
pub fn detect_window_reduction(state: &mut TcpDirState, raw_window: u16) -> Option<(u64, u64)> {
    let scaled = u64::from(raw_window) << state.window_scale;
    let prev = state.last_adv_window.replace(scaled);
    match prev {
        Some(p) if scaled < p => Some((p, scaled)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Handshake {
    pub first_syn: Option<Timestamp>,
    pub last_syn: Option<Timestamp>,
    pub syn_count: u32,
    pub synack: Option<Timestamp>,
    /// Last initiator SYN sent before the first SYN/ACK.
    pub syn_before_synack: Option<Timestamp>,
    pub ack: Option<Timestamp>,
    pub refused: bool,
}

/// TCP state of one bidirectional flow.
#[derive(Debug, Clone, Default)]
pub struct TcpFlowState {
    pub dirs: [TcpDirState; 2],
    pub handshake: Handshake,
    /// Packets with each flag set, indexed by bit position (FIN..CWR).
    pub flag_counts: [u64; 8],
    pub data_counts: [u64; 5],
    pub late_fillers: u64,
    /// RTT samples in microseconds from data/ACK matching, per direction of
    /// the data.
    pub ack_samples_us: Vec<u64>,
}

impl TcpFlowState {
    pub fn data_count(&self, class: DataClass) -> u64 {
        self.data_counts[class.index()]
    }

    pub fn data_packets(&self) -> u64 {
        self.data_counts.iter().sum()
    }

    pub fn closed(&self) -> bool {
        (self.dirs[0].fin_seen && self.dirs[1].fin_seen) || self.dirs[0].rst_seen || self.dirs[1].rst_seen
    }

    /// Processes one packet travelling in `dir`, returning the events it
    /// raised.
    pub fn track(&mut self, pkt: &PacketRecord, dir: Direction, cfg: &TcpConfig) -> Vec<TcpEvent> {
        let Some(h) = pkt.tcp() else {
            return Vec::new();
        };
        let mut events = Vec::new();
        let mut emit = |kind: EventKind, seq: u32| events.push(TcpEvent { kind, ts: pkt.ts, dir, seq });
        let flags = h.flags;
        for (i, c) in self.flag_counts.iter_mut().enumerate() {
            if flags.0 & (1 << i) != 0 {
                *c += 1;
            }
        }
        if flags.ece() {
            emit(EventKind::EceSeen { on_syn: flags.syn() }, h.seq);
        }
        if flags.cwr() {
            emit(EventKind::CwrSeen { on_syn: flags.syn() }, h.seq);
        }

        let (s, p) = {
            let (a, b) = self.dirs.split_at_mut(1);
            match dir {
                Direction::Fwd => (&mut a[0], &mut b[0]),
                Direction::Rev => (&mut b[0], &mut a[0]),
            }
        };

        // handshake bookkeeping
        if flags.syn() {
            if !flags.ack() && dir == Direction::Fwd {
                let hs = &mut self.handshake;
                hs.first_syn.get_or_insert(pkt.ts);
                hs.last_syn = Some(pkt.ts);
                hs.syn_count += 1;
                if hs.synack.is_none() {
                    hs.syn_before_synack = Some(pkt.ts);
                }
                if s.isn == Some(h.seq) {
                    emit(EventKind::SynRetry, h.seq);
                }
            }
            if flags.ack() && dir == Direction::Rev && self.handshake.synack.is_none() {
                self.handshake.synack = Some(pkt.ts);
            }
            if s.isn.is_none() {
                s.isn = Some(h.seq);
                s.window_scale_offered = h.options.window_scale;
            }
            let syn_end = s.unwrap_seq(h.seq) + 1;
            s.next_seq = Some(s.next_seq.map_or(syn_end, |n| n.max(syn_end)));
            if flags.ack() {
                // SYN/ACK: both offers known now
                if let (Some(a), Some(b)) = (s.window_scale_offered, p.window_scale_offered) {
                    s.window_scale = a;
                    p.window_scale = b;
                }
            }
        } else if flags.ack()
            && dir == Direction::Fwd
            && self.handshake.synack.is_some()
            && self.handshake.ack.is_none()
            && p.isn.is_some_and(|isn| h.ack == isn.wrapping_add(1))
        {
            self.handshake.ack = Some(pkt.ts);
        }
        if flags.rst() {
            s.rst_seen = true;
            if dir == Direction::Rev && self.handshake.first_syn.is_some() && self.handshake.synack.is_none() {
                self.handshake.refused = true;
            }
        }

        // acknowledgement side: this packet acknowledges the peer's data
        if flags.ack() {
            Self::on_ack(s, p, h, pkt, &mut self.ack_samples_us, &mut emit);
        }

        // window
        if flags.ack() && !flags.syn() {
            if let Some((from, to)) = detect_window_reduction(s, h.window) {
                emit(EventKind::WindowReduction { from_bytes: from, to_bytes: to }, h.ack);
                if to == 0 {
                    emit(EventKind::ZeroWindow, h.ack);
                }
            }
        }

        // data
        let len = pkt.payload_length;
        if len > 0 && !flags.syn() {
            let start = s.unwrap_seq(h.seq);
            let end = start + u64::from(len);
            let class = if s.seen_ranges.intersects(start, end) {
                let class = classify_retransmission(s, start, end);
                if s.dup_ack_value == Some(start) {
                    s.dup_ack_count = 0;
                }
                for e in s.pending_rtt.iter_mut().filter(|e| e.edge > start && e.edge <= end) {
                    e.retransmitted = true;
                }
                let kind = match class {
                    DataClass::RetransmissionFast => EventKind::RetransmissionFast,
                    DataClass::RetransmissionSpurious => EventKind::RetransmissionSpurious,
                    _ => EventKind::RetransmissionPlain,
                };
                emit(kind, h.seq);
                s.next_seq = Some(s.next_seq.map_or(end, |n| n.max(end)));
                class
            } else {
                if s.pending_rtt.len() >= MAX_PENDING_EDGES {
                    s.pending_rtt.pop_front();
                }
                s.pending_rtt.push_back(PendingEdge { edge: end, sent: pkt.ts, retransmitted: false });
                match detect_gap_and_ooo(s, start, end, pkt.ts, cfg.reorder_window_us) {
                    GapVerdict::LostSegmentInferred { gap_start, gap_end } => {
                        emit(EventKind::LostSegmentInferred { gap_bytes: gap_end - gap_start }, h.seq);
                        DataClass::InOrder
                    }
                    GapVerdict::OutOfOrder => {
                        emit(EventKind::OutOfOrder, h.seq);
                        DataClass::OutOfOrder
                    }
                    GapVerdict::LateFiller => {
                        self.late_fillers += 1;
                        DataClass::InOrder
                    }
                    GapVerdict::InOrder => DataClass::InOrder,
                }
            };
            s.seen_ranges.insert(start, end);
            self.data_counts[class.index()] += 1;
        }
        if flags.fin() {
            s.fin_seen = true;
            let fin_end = s.unwrap_seq(h.seq) + u64::from(len) + 1;
            s.next_seq = Some(s.next_seq.map_or(fin_end, |n| n.max(fin_end)));
        }
        events
    }

    fn on_ack(
        s: &mut TcpDirState,
        p: &mut TcpDirState,
        h: &TcpHeader,
        pkt: &PacketRecord,
        samples: &mut Vec<u64>,
        emit: &mut impl FnMut(EventKind, u32),
    ) {
        let ack = p.unwrap_seq(h.ack);
        let advanced = p.acked_upto.is_none_or(|a| ack > a);
        if advanced {
            p.acked_upto = Some(ack);
            p.dup_ack_count = 0;
            p.dup_ack_value = Some(ack);
        }
        let pure = pkt.payload_length == 0 && h.flags.0 & (TcpFlags::SYN | TcpFlags::FIN | TcpFlags::RST) == 0;
        if pure && !advanced && s.last_ack_sent == Some(h.ack) && s.last_raw_window == Some(h.window) {
            p.dup_ack_count += 1;
            p.dup_ack_value = Some(ack);
            emit(EventKind::DuplicateAck { count: p.dup_ack_count }, h.ack);
        }
        if !h.flags.syn() {
            s.last_ack_sent = Some(h.ack);
            s.last_raw_window = Some(h.window);
        }

        while let Some(front) = p.pending_rtt.front() {
            if front.edge > ack {
                break;
            }
            let e = p.pending_rtt.pop_front().expect("front exists");
            if !e.retransmitted {
                samples.push(pkt.ts.since(e.sent));
            }
        }
        // out-of-order inserts can leave covered edges behind the front
        if p.pending_rtt.iter().any(|e| e.edge <= ack) {
            p.pending_rtt.retain(|e| {
                if e.edge <= ack {
                    if !e.retransmitted {
                        samples.push(pkt.ts.since(e.sent));
                    }
                    false
                } else {
                    true
                }
            });
        }
    }
}

#[cfg(test)]
mod tests;
