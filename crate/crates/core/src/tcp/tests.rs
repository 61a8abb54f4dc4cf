use super::*;
use crate::ingest::TcpFlags as F;
use crate::synth::TcpConn;
use proptest::prelude::*;

struct Harness {
    conn: TcpConn,
    state: TcpFlowState,
    cfg: TcpConfig,
}

impl Harness {
    fn new() -> Self {
        Harness {
            conn: TcpConn::new(([10, 0, 0, 1], 40000), ([192, 0, 2, 9], 80)),
            state: TcpFlowState::default(),
            cfg: TcpConfig::default(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn send(&mut self, us: u64, fwd: bool, flags: u8, seq: u32, ack: u32, len: usize, win: u16, opts: Vec<u8>) -> Vec<EventKind> {
        let spec = self.conn.seg(fwd, flags, seq, ack, len, win, opts);
        let dir = if fwd { Direction::Fwd } else { Direction::Rev };
        self.state.track(&spec.record(Timestamp(us)), dir, &self.cfg).into_iter().map(|e| e.kind).collect()
    }

    fn c(&mut self, us: u64, flags: u8, seq: u32, ack: u32, len: usize) -> Vec<EventKind> {
        self.send(us, true, flags, seq, ack, len, 65535, Vec::new())
    }

    fn s(&mut self, us: u64, flags: u8, seq: u32, ack: u32, len: usize) -> Vec<EventKind> {
        self.send(us, false, flags, seq, ack, len, 65535, Vec::new())
    }

    fn handshake(&mut self) {
        self.c(0, F::SYN, 999, 0, 0);
        self.s(180_000, F::SYN | F::ACK, 4999, 1000, 0);
        self.c(181_000, F::ACK, 1000, 5000, 0);
    }
}

#[test]
fn duplicate_segment_is_plain_retransmission() {
    let mut h = Harness::new();
    h.handshake();
    assert!(h.c(1_000_000, F::ACK, 1000, 5000, 100).is_empty());
    assert_eq!(h.c(1_500_000, F::ACK, 1000, 5000, 100), vec![EventKind::RetransmissionPlain]);
    assert_eq!(h.state.data_count(DataClass::InOrder), 1);
    assert_eq!(h.state.data_count(DataClass::RetransmissionPlain), 1);
}

#[test]
fn resend_after_covering_ack_is_spurious() {
    let mut h = Harness::new();
    h.handshake();
    h.c(1_000_000, F::ACK, 1000, 5000, 100);
    h.s(1_100_000, F::ACK, 5000, 1100, 0);
    assert_eq!(h.c(1_200_000, F::ACK, 1000, 5000, 100), vec![EventKind::RetransmissionSpurious]);
}

#[test]
fn three_dup_acks_then_left_edge_is_fast() {
    let mut h = Harness::new();
    h.handshake();
    h.c(1_000_000, F::ACK, 1000, 5000, 100);
    h.c(1_000_100, F::ACK, 1100, 5000, 100);
    h.c(1_000_200, F::ACK, 1200, 5000, 100);
    h.c(1_000_300, F::ACK, 1300, 5000, 100);
    // the first segment is lost beyond the capture point
    h.s(1_180_000, F::ACK, 5000, 1000, 0);
    for i in 1..=3 {
        assert_eq!(h.s(1_180_000 + i * 100, F::ACK, 5000, 1000, 0), vec![EventKind::DuplicateAck { count: i as u32 }]);
    }
    assert_eq!(h.c(1_181_000, F::ACK, 1000, 5000, 100), vec![EventKind::RetransmissionFast]);
}

#[test]
fn window_update_is_not_a_duplicate_ack() {
    let mut h = Harness::new();
    h.handshake();
    h.c(1_000_000, F::ACK, 1000, 5000, 100);
    h.s(1_100_000, F::ACK, 5000, 1000, 0);
    let ev = h.send(1_100_100, false, F::ACK, 5000, 1000, 0, 60000, Vec::new());
    assert_eq!(ev, vec![EventKind::WindowReduction { from_bytes: 65535, to_bytes: 60000 }]);
    assert_eq!(h.state.dirs[0].dup_ack_count, 0);
}

#[test]
fn classify_retransmission_rules() {
    let mut st = TcpDirState::default();
    st.acked_upto = Some(1100);
    assert_eq!(classify_retransmission(&st, 1000, 1100), DataClass::RetransmissionSpurious);
    st.acked_upto = Some(1000);
    st.dup_ack_count = 3;
    st.dup_ack_value = Some(1000);
    assert_eq!(classify_retransmission(&st, 1000, 1100), DataClass::RetransmissionFast);
    st.dup_ack_count = 1;
    assert_eq!(classify_retransmission(&st, 1000, 1100), DataClass::RetransmissionPlain);
}

#[test]
fn gap_then_filler_inside_reorder_window() {
    let mut h = Harness::new();
    h.handshake();
    assert_eq!(h.c(1_000_000, F::ACK, 2000, 5000, 1000), vec![EventKind::LostSegmentInferred { gap_bytes: 1000 }]);
    assert_eq!(h.c(1_001_000, F::ACK, 1000, 5000, 1000), vec![EventKind::OutOfOrder]);
    assert!(h.c(1_002_000, F::ACK, 3000, 5000, 100).is_empty());
    assert_eq!(h.state.data_count(DataClass::OutOfOrder), 1);
    assert_eq!(h.state.data_count(DataClass::InOrder), 2);
}

#[test]
fn late_filler_raises_no_event() {
    let mut h = Harness::new();
    h.handshake();
    h.c(1_000_000, F::ACK, 2000, 5000, 1000);
    assert!(h.c(1_200_000, F::ACK, 1000, 5000, 1000).is_empty());
    assert_eq!(h.state.late_fillers, 1);
    assert_eq!(h.state.data_count(DataClass::InOrder), 2);
}

#[test]
fn gap_and_ooo_direct() {
    let mut st = TcpDirState { next_seq: Some(1000), ..Default::default() };
    let v = detect_gap_and_ooo(&mut st, 2000, 2100, Timestamp(0), 3000);
    assert_eq!(v, GapVerdict::LostSegmentInferred { gap_start: 1000, gap_end: 2000 });
    assert_eq!(detect_gap_and_ooo(&mut st, 2100, 2200, Timestamp(10), 3000), GapVerdict::InOrder);
    assert_eq!(detect_gap_and_ooo(&mut st, 1000, 1500, Timestamp(1000), 3000), GapVerdict::OutOfOrder);
    // the rest of the gap is still open with its original timestamp
    assert_eq!(detect_gap_and_ooo(&mut st, 1500, 2000, Timestamp(5000), 3000), GapVerdict::LateFiller);
}

#[test]
fn window_reduction_unscaled() {
    let mut st = TcpDirState::default();
    assert_eq!(detect_window_reduction(&mut st, 65535), None);
    assert_eq!(detect_window_reduction(&mut st, 32768), Some((65535, 32768)));
    assert_eq!(detect_window_reduction(&mut st, 32768), None);
    let mut st = TcpDirState::default();
    detect_window_reduction(&mut st, 1000);
    assert_eq!(detect_window_reduction(&mut st, 1000), None);
}

#[test]
fn window_reduction_with_negotiated_scale() {
    let ws7 = vec![1, 3, 3, 7];
    let mut h = Harness::new();
    h.send(0, true, F::SYN, 999, 0, 0, 65535, ws7.clone());
    h.send(1000, false, F::SYN | F::ACK, 4999, 1000, 0, 65535, ws7);
    h.send(2000, true, F::ACK, 1000, 5000, 0, 100, Vec::new());
    let ev = h.send(3000, true, F::ACK, 1000, 5000, 0, 50, Vec::new());
    assert_eq!(ev, vec![EventKind::WindowReduction { from_bytes: 12800, to_bytes: 6400 }]);
    assert!(h.send(4000, true, F::ACK, 1000, 5000, 0, 0, Vec::new()).contains(&EventKind::ZeroWindow));
}

#[test]
fn scale_needs_both_syns() {
    let mut h = Harness::new();
    h.send(0, true, F::SYN, 999, 0, 0, 65535, vec![1, 3, 3, 7]);
    h.send(1000, false, F::SYN | F::ACK, 4999, 1000, 0, 65535, Vec::new());
    h.send(2000, true, F::ACK, 1000, 5000, 0, 100, Vec::new());
    let ev = h.send(3000, true, F::ACK, 1000, 5000, 0, 50, Vec::new());
    assert_eq!(ev, vec![EventKind::WindowReduction { from_bytes: 100, to_bytes: 50 }]);
}

#[test]
fn flag_census_counts_every_marked_packet() {
    let mut h = Harness::new();
    let ev = h.c(0, F::SYN | F::ECE | F::CWR, 999, 0, 0);
    assert_eq!(ev, vec![EventKind::EceSeen { on_syn: true }, EventKind::CwrSeen { on_syn: true }]);
    h.s(1000, F::SYN | F::ACK | F::ECE, 4999, 1000, 0);
    h.c(2000, F::ACK | F::CWR, 1000, 5000, 10);
    assert_eq!(h.state.flag_counts[6], 2);
    assert_eq!(h.state.flag_counts[7], 2);
    assert_eq!(h.state.flag_counts[1], 2);
}

#[test]
fn handshake_rtt_components() {
    let mut h = Harness::new();
    h.handshake();
    let rtt = estimate_rtt(&h.state);
    assert_eq!(rtt.handshake_syn_side_us, Some(180_000));
    assert_eq!(rtt.handshake_ack_side_us, Some(1_000));
    assert_eq!(rtt.handshake_total_us, Some(181_000));
    assert!(rtt.ack_samples_us.is_empty());
    assert!(rtt.summary.is_none());
}

#[test]
fn ack_sample_from_covering_ack() {
    let mut h = Harness::new();
    h.c(1_000_000, F::ACK, 1000, 5000, 100);
    h.s(1_200_000, F::ACK, 5000, 1100, 0);
    let rtt = estimate_rtt(&h.state);
    assert_eq!(rtt.handshake_total_us, None);
    assert_eq!(rtt.ack_samples_us, vec![200_000]);
    let s = rtt.summary.unwrap();
    assert!((s.median_s - 0.2).abs() < 1e-12);
}

#[test]
fn karn_skips_retransmitted_edge() {
    let mut h = Harness::new();
    h.c(1_000_000, F::ACK, 1000, 5000, 100);
    h.c(1_010_000, F::ACK, 1100, 5000, 100);
    h.c(1_300_000, F::ACK, 1000, 5000, 100);
    h.s(1_400_000, F::ACK, 5000, 1200, 0);
    assert_eq!(estimate_rtt(&h.state).ack_samples_us, vec![390_000]);
}

#[test]
fn lone_syn_is_no_answer() {
    let mut h = Harness::new();
    h.c(0, F::SYN, 999, 0, 0);
    let cfg = TcpConfig::default();
    let out = detect_establishment_problem(&h.state, true, Timestamp(60_000_000), &cfg);
    assert_eq!(out, EstablishmentOutcome::Failure { reason: FailureReason::NoAnswer });
    // trace ended two seconds later without expiry: not yet decidable
    let out = detect_establishment_problem(&h.state, false, Timestamp(2_000_000), &cfg);
    assert_eq!(out, EstablishmentOutcome::Clean);
}

#[test]
fn syn_answered_by_rst_is_refused() {
    let mut h = Harness::new();
    h.c(0, F::SYN, 999, 0, 0);
    h.s(1000, F::RST | F::ACK, 0, 1000, 0);
    let out = detect_establishment_problem(&h.state, false, Timestamp(1000), &h.cfg);
    assert_eq!(out, EstablishmentOutcome::Failure { reason: FailureReason::Refused });
    let ev = establishment_event(out, &h.state, Timestamp(1000)).unwrap();
    assert_eq!(ev.kind, EventKind::EstablishmentFailure { reason: FailureReason::Refused });
}

#[test]
fn syn_retry_then_success() {
    let mut h = Harness::new();
    assert!(h.c(0, F::SYN, 999, 0, 0).is_empty());
    assert_eq!(h.c(3_000_000, F::SYN, 999, 0, 0), vec![EventKind::SynRetry]);
    h.s(3_180_000, F::SYN | F::ACK, 4999, 1000, 0);
    h.c(3_181_000, F::ACK, 1000, 5000, 0);
    let out = detect_establishment_problem(&h.state, false, Timestamp(3_181_000), &h.cfg);
    assert_eq!(out, EstablishmentOutcome::SynRetry { retries: 1 });
    // handshake RTT uses the retried SYN
    assert_eq!(estimate_rtt(&h.state).handshake_total_us, Some(181_000));
}

fn ev(kind: EventKind, us: u64, dir: Direction) -> TcpEvent {
    TcpEvent { kind, ts: Timestamp(us), dir, seq: 0 }
}

#[test]
fn congestion_rules() {
    let cfg = TcpConfig::default();
    let r = derive_congestion_events(&[ev(EventKind::CwrSeen { on_syn: false }, 0, Direction::Fwd)], &cfg);
    assert_eq!(r.count, 1);
    assert!(matches!(r.evidence[0], CongestionEvidence::Flag(_)));

    let wr = EventKind::WindowReduction { from_bytes: 2, to_bytes: 1 };
    let pair = [ev(wr, 1_000_000, Direction::Fwd), ev(EventKind::RetransmissionPlain, 1_200_000, Direction::Fwd)];
    let r = derive_congestion_events(&pair, &cfg);
    assert_eq!(r.count, 1);
    assert_eq!(r.correlated_events(), 1);

    assert_eq!(derive_congestion_events(&[ev(wr, 0, Direction::Fwd)], &cfg).count, 0);
    let far = [ev(wr, 0, Direction::Fwd), ev(EventKind::RetransmissionPlain, 1_000_001, Direction::Fwd)];
    assert_eq!(derive_congestion_events(&far, &cfg).count, 0);
    let syn_only = [ev(EventKind::EceSeen { on_syn: true }, 0, Direction::Fwd)];
    assert_eq!(derive_congestion_events(&syn_only, &cfg).count, 0);
}

#[test]
fn sequence_wrap_is_in_order() {
    let mut h = Harness::new();
    let isn = u32::MAX - 150;
    h.c(0, F::SYN, isn, 0, 0);
    h.s(1000, F::SYN | F::ACK, 7, isn.wrapping_add(1), 0);
    let mut seq = isn.wrapping_add(1);
    for i in 0..4 {
        assert!(h.c(2000 + i * 10, F::ACK, seq, 8, 100).is_empty());
        seq = seq.wrapping_add(100);
    }
    assert_eq!(h.state.data_count(DataClass::InOrder), 4);
}

proptest! {
    #[test]
    fn window_events_scale_invariant(shift in 0u8..13, wins in proptest::collection::vec(0u16..32768, 2..30)) {
        let run = |ws: u8, raw: &dyn Fn(u16) -> u16| {
            let mut h = Harness::new();
            h.send(0, true, F::SYN, 999, 0, 0, 65535, vec![1, 3, 3, ws]);
            h.send(1000, false, F::SYN | F::ACK, 4999, 1000, 0, 65535, vec![1, 3, 3, 0]);
            let mut out = Vec::new();
            for (i, &w) in wins.iter().enumerate() {
                out.extend(h.send(2000 + i as u64, true, F::ACK, 1000, 5000, 0, raw(w), Vec::new()));
            }
            out
        };
        let a = run(shift, &|w| w * 2);
        let b = run(shift + 1, &|w| w);
        prop_assert_eq!(a, b);
    }
}
