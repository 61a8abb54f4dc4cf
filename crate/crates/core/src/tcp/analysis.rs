use super::{Direction, EventKind, FailureReason, TcpConfig, TcpEvent, TcpFlowState};
use crate::ingest::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CongestionEvidence {
    /// ECE or CWR set on a non-SYN packet.
    Flag(TcpEvent),
    /// A window reduction and a loss signal in the same direction.
    Correlated { reduction: TcpEvent, loss: TcpEvent },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CongestionReport {
    pub count: u32,
    pub evidence: Vec<CongestionEvidence>,
}

impl CongestionReport {
    pub fn flag_events(&self) -> u32 {
        self.evidence.iter().filter(|e| matches!(e, CongestionEvidence::Flag(_))).count() as u32
    }

    pub fn correlated_events(&self) -> u32 {
        self.evidence.iter().filter(|e| matches!(e, CongestionEvidence::Correlated { .. })).count() as u32
    }
}

fn is_loss_signal(kind: &EventKind) -> bool {
    kind.is_retransmission() || matches!(kind, EventKind::LostSegmentInferred { .. })
}

/// Counts congestion events of one flow. ECN flags on SYN packets only
/// negotiate ECN and are ignored; the flag rule contributes at most one
/// event. Each window reduction with a loss signal in the same direction
/// within the correlation window contributes one more.
pub fn derive_congestion_events(events: &[TcpEvent], cfg: &TcpConfig) -> CongestionReport {
    let mut report = CongestionReport::default();
    let flag = events.iter().find(|e| {
        matches!(e.kind, EventKind::EceSeen { on_syn: false } | EventKind::CwrSeen { on_syn: false })
    });
    if let Some(e) = flag {
        report.count += 1;
        report.evidence.push(CongestionEvidence::Flag(e.clone()));
    }
    for red in events.iter().filter(|e| matches!(e.kind, EventKind::WindowReduction { .. })) {
        let loss = events.iter().find(|e| {
            e.dir == red.dir && is_loss_signal(&e.kind) && e.ts.micros().abs_diff(red.ts.micros()) <= cfg.correlation_window_us
        });
        if let Some(l) = loss {
            report.count += 1;
            report.evidence.push(CongestionEvidence::Correlated { reduction: red.clone(), loss: l.clone() });
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSummary {
    pub count: usize,
    pub min_us: u64,
    pub median_us: f64,
    pub mean_us: f64,
    pub min_s: f64,
    pub median_s: f64,
    pub mean_s: f64,
}

impl RttSummary {
    pub fn from_micros(samples: &[u64]) -> Option<RttSummary> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_unstable();
        let n = v.len();
        let median_us = if n % 2 == 1 { v[n / 2] as f64 } else { (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0 };
        let sum: u128 = v.iter().map(|&x| u128::from(x)).sum();
        let mean_us = sum as f64 / n as f64;
        Some(RttSummary {
            count: n,
            min_us: v[0],
            median_us,
            mean_us,
            min_s: v[0] as f64 / 1e6,
            median_s: median_us / 1e6,
            mean_s: mean_us / 1e6,
        })
    }
}

/// Durations in microseconds; `*_s` accessors give seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RttEstimate {
    pub handshake_syn_side_us: Option<u64>,
    pub handshake_ack_side_us: Option<u64>,
    pub handshake_total_us: Option<u64>,
    pub ack_samples_us: Vec<u64>,
    pub summary: Option<RttSummary>,
}

impl RttEstimate {
    pub fn handshake_syn_side_s(&self) -> Option<f64> {
        self.handshake_syn_side_us.map(|u| u as f64 / 1e6)
    }

    pub fn handshake_ack_side_s(&self) -> Option<f64> {
        self.handshake_ack_side_us.map(|u| u as f64 / 1e6)
    }

    pub fn handshake_total_s(&self) -> Option<f64> {
        self.handshake_total_us.map(|u| u as f64 / 1e6)
    }
}

/// Handshake timings use the last SYN sent before the SYN/ACK.
pub fn estimate_rtt(state: &TcpFlowState) -> RttEstimate {
    let hs = &state.handshake;
    let syn_side = match (hs.syn_before_synack, hs.synack) {
        (Some(s), Some(sa)) if sa >= s => Some(sa.since(s)),
        _ => None,
    };
    let ack_side = match (hs.synack, hs.ack) {
        (Some(sa), Some(a)) if a >= sa => Some(a.since(sa)),
        _ => None,
    };
    let total = match (syn_side, ack_side) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    RttEstimate {
        handshake_syn_side_us: syn_side,
        handshake_ack_side_us: ack_side,
        handshake_total_us: total,
        ack_samples_us: state.ack_samples_us.clone(),
        summary: RttSummary::from_micros(&state.ack_samples_us),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstablishmentOutcome {
    /// No SYN seen, or a single SYN answered.
    Clean,
    SynRetry { retries: u32 },
    Failure { reason: FailureReason },
}

impl EstablishmentOutcome {
    pub fn failure(&self) -> Option<FailureReason> {
        match self {
            EstablishmentOutcome::Failure { reason } => Some(*reason),
            _ => None,
        }
    }
}

/// `idle_expired` is true when the flow ended by idle timeout; otherwise
/// an unanswered SYN only counts as a failure once `now` is at least the
/// answer timeout past the first SYN.
pub fn detect_establishment_problem(
    state: &TcpFlowState,
    idle_expired: bool,
    now: Timestamp,
    cfg: &TcpConfig,
) -> EstablishmentOutcome {
    let hs = &state.handshake;
    let Some(first_syn) = hs.first_syn else {
        return EstablishmentOutcome::Clean;
    };
    if hs.refused {
        return EstablishmentOutcome::Failure { reason: FailureReason::Refused };
    }
    let answered_in_time = hs.synack.is_some_and(|t| t.since(first_syn) <= cfg.syn_answer_timeout_us);
    if !answered_in_time {
        let waited = now.since(first_syn) >= cfg.syn_answer_timeout_us;
        if hs.synack.is_some() || idle_expired || waited {
            return EstablishmentOutcome::Failure { reason: FailureReason::NoAnswer };
        }
        return EstablishmentOutcome::Clean;
    }
    if hs.syn_count > 1 {
        EstablishmentOutcome::SynRetry { retries: hs.syn_count - 1 }
    } else {
        EstablishmentOutcome::Clean
    }
}

/// Event recorded for a failed establishment, if any.
pub fn establishment_event(outcome: EstablishmentOutcome, state: &TcpFlowState, ts: Timestamp) -> Option<TcpEvent> {
    let reason = outcome.failure()?;
    Some(TcpEvent {
        kind: EventKind::EstablishmentFailure { reason },
        ts,
        dir: Direction::Fwd,
        seq: state.dirs[0].isn.unwrap_or(0),
    })
}
