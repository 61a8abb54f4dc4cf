use proptest::prelude::*;

use tcpmetro::flow::{FlowTable, DEFAULT_IDLE_TIMEOUT_US};
use tcpmetro::ingest::{TcpFlags as F, Timestamp};
use tcpmetro::synth::TcpConn;
use tcpmetro::tcp::{DataClass, EventKind, TcpConfig};

#[derive(Debug, Clone)]
struct Seg {
    from_client: bool,
    flags: u8,
    seq_off: u32,
    ack_off: u32,
    payload: usize,
    gap_us: u64,
}

fn seg() -> impl Strategy<Value = Seg> {
    (any::<bool>(), any::<u8>(), 0u32..20_000, 0u32..20_000, prop_oneof![Just(0usize), 1usize..1400], 0u64..50_000)
        .prop_map(|(from_client, flags, seq_off, ack_off, payload, gap_us)| Seg {
            from_client,
            flags,
            seq_off,
            ack_off,
            payload,
            gap_us,
        })
}

fn replay(segs: &[Seg]) -> Vec<tcpmetro::flow::FlowRecord> {
    let conn = TcpConn::new(([10, 1, 2, 3], 51000), ([198, 51, 100, 9], 443));
    let (cisn, sisn) = (4_000_000_000u32, 77u32);
    let mut table = FlowTable::new(DEFAULT_IDLE_TIMEOUT_US, TcpConfig::default());
    let mut ts = 1_000_000u64;
    let mut push = |ts: u64, f| table.update_flow(&tcpmetro::synth::FrameSpec::record(&f, Timestamp(ts)));
    push(ts, conn.c2s(F::SYN, cisn, 0, 0));
    push(ts + 10_000, conn.s2c(F::SYN | F::ACK, sisn, cisn.wrapping_add(1), 0));
    push(ts + 20_000, conn.c2s(F::ACK, cisn.wrapping_add(1), sisn.wrapping_add(1), 0));
    ts += 20_000;
    for s in segs {
        ts += s.gap_us;
        let f = if s.from_client {
            conn.c2s(s.flags, cisn.wrapping_add(1 + s.seq_off), sisn.wrapping_add(1 + s.ack_off), s.payload)
        } else {
            conn.s2c(s.flags, sisn.wrapping_add(1 + s.seq_off), cisn.wrapping_add(1 + s.ack_off), s.payload)
        };
        push(ts, f);
    }
    drop(push);
    table.finish_all(Timestamp(ts + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn flag_census_matches_packets(segs in proptest::collection::vec(seg(), 1..80)) {
        let flows = replay(&segs);
        let mut census = [0u64; 8];
        for f in &flows {
            for (c, n) in census.iter_mut().zip(f.tcp_state().unwrap().flag_counts) {
                *c += n;
            }
        }
        let handshake = [F::SYN, F::SYN | F::ACK, F::ACK];
        for (bit, &got) in census.iter().enumerate() {
            let want = segs.iter().map(|s| s.flags).chain(handshake).filter(|f| f & (1 << bit) != 0).count() as u64;
            prop_assert_eq!(got, want, "bit {}", bit);
        }
    }

    #[test]
    fn every_data_packet_gets_one_class(segs in proptest::collection::vec(seg(), 1..80)) {
        let flows = replay(&segs);
        let data = segs.iter().filter(|s| s.payload > 0 && s.flags & F::SYN == 0).count() as u64;
        let mut classified = 0;
        let mut retrans_class = 0;
        let mut ooo_class = 0;
        let mut retrans_events = 0;
        let mut ooo_events = 0;
        for f in &flows {
            let st = f.tcp_state().unwrap();
            classified += st.data_counts.iter().sum::<u64>();
            retrans_class += st.data_count(DataClass::RetransmissionFast)
                + st.data_count(DataClass::RetransmissionPlain)
                + st.data_count(DataClass::RetransmissionSpurious);
            ooo_class += st.data_count(DataClass::OutOfOrder);
            for e in &f.events {
                match e.kind {
                    EventKind::RetransmissionFast | EventKind::RetransmissionPlain | EventKind::RetransmissionSpurious => {
                        retrans_events += 1
                    }
                    EventKind::OutOfOrder => ooo_events += 1,
                    _ => {}
                }
            }
        }
        prop_assert_eq!(classified, data);
        prop_assert_eq!(retrans_class, retrans_events);
        prop_assert_eq!(ooo_class, ooo_events);
    }

    // Shifting every timestamp leaves counts and event kinds alone.
    #[test]
    fn time_shift_invariance(segs in proptest::collection::vec(seg(), 1..40), shift in 1u32..200) {
        let mut later = segs.clone();
        later[0].gap_us += u64::from(shift) * 1_000;
        let summarize = |flows: &[tcpmetro::flow::FlowRecord]| -> Vec<_> {
            flows
                .iter()
                .map(|f| {
                    let st = f.tcp_state().unwrap();
                    let kinds: Vec<_> = f.events.iter().map(|e| format!("{:?}", e.kind)).collect();
                    (f.length(), f.bytes(), st.data_counts, st.flag_counts, kinds)
                })
                .collect()
        };
        prop_assert_eq!(summarize(&replay(&segs)), summarize(&replay(&later)));
    }
}
