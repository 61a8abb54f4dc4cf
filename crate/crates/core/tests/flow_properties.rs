mod common;

use common::{random_trace, reversed, rng, Frames};
use tcpmetro::flow::{FlowRecord, FlowTable, DEFAULT_IDLE_TIMEOUT_US};
use tcpmetro::tcp::TcpConfig;

fn run(frames: &Frames, timeout_us: u64) -> (Vec<FlowRecord>, tcpmetro::flow::FlowCounters, u64, u64) {
    let mut table = FlowTable::new(timeout_us, TcpConfig::default());
    let mut flows = Vec::new();
    let (mut pkts, mut bytes) = (0, 0);
    for (i, (ts, f)) in frames.iter().enumerate() {
        let rec = f.record(*ts);
        pkts += 1;
        bytes += u64::from(rec.ip_total_length);
        table.update_flow(&rec);
        if i % 97 == 0 {
            flows.extend(table.expire_flows(*ts));
        }
    }
    let end = frames.last().map(|f| f.0).unwrap_or_default();
    flows.extend(table.expire_flows(end));
    flows.extend(table.finish_all(end));
    (flows, *table.counters(), pkts, bytes)
}

#[test]
fn conservation_over_random_traces() {
    for seed in 0..10 {
        let frames = random_trace(&mut rng(seed), 150);
        let (flows, counters, pkts, bytes) = run(&frames, DEFAULT_IDLE_TIMEOUT_US);
        let len: u64 = flows.iter().map(|f| f.length()).sum();
        let vol: u64 = flows.iter().map(|f| f.bytes()).sum();
        assert_eq!(len, pkts, "seed {seed}");
        assert_eq!(vol, bytes, "seed {seed}");
        assert_eq!(counters.packets_assigned, pkts);
        assert_eq!(counters.bytes_assigned, bytes);
        assert_eq!(counters.flows_created, flows.len() as u64);
        assert_eq!(
            counters.flows_expired + counters.flows_fin_closed + counters.flows_flushed,
            counters.flows_created
        );
    }
}

fn shape(flows: &[FlowRecord]) -> Vec<(u64, u64, u64)> {
    let mut v: Vec<_> = flows.iter().map(|f| (f.length(), f.duration_us(), f.bytes())).collect();
    v.sort_unstable();
    v
}

#[test]
fn reversing_every_packet_changes_nothing() {
    for seed in 10..20 {
        let frames = random_trace(&mut rng(seed), 150);
        let rev: Frames = frames.iter().map(|(ts, f)| (*ts, reversed(f))).collect();
        let (a, ..) = run(&frames, DEFAULT_IDLE_TIMEOUT_US);
        let (b, ..) = run(&rev, DEFAULT_IDLE_TIMEOUT_US);
        assert_eq!(a.len(), b.len(), "seed {seed}");
        assert_eq!(shape(&a), shape(&b), "seed {seed}");
    }
}

#[test]
fn larger_timeout_never_more_flows() {
    for seed in 20..26 {
        let frames = random_trace(&mut rng(seed), 150);
        let counts: Vec<usize> =
            [1_000_000, 5_000_000, 30_000_000, 60_000_000, 120_000_000, 3_600_000_000]
                .iter()
                .map(|&t| run(&frames, t).0.len())
                .collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "seed {seed}: {counts:?}");
    }
}

#[test]
fn finished_flows_come_out_in_time_order() {
    let frames = random_trace(&mut rng(99), 200);
    let mut table = FlowTable::new(DEFAULT_IDLE_TIMEOUT_US, TcpConfig::default());
    for (ts, f) in &frames {
        table.update_flow(&f.record(*ts));
    }
    let flows = table.finish_all(frames.last().unwrap().0);
    assert!(flows.windows(2).all(|w| (w[0].first_ts, w[0].key) <= (w[1].first_ts, w[1].key)));
}
