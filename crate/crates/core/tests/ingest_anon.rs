mod common;

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::net::Ipv4Addr;
use std::path::Path;

use proptest::prelude::*;
use rand::Rng;

use common::{anon, random_trace, rng, write_trace};
use tcpmetro::anon::{anonymize_trace, common_prefix_len, Anonymizer, ZeroPrf};
use tcpmetro::flow::{FlowTable, DEFAULT_IDLE_TIMEOUT_US};
use tcpmetro::ingest::{IngestError, PacketRecord, TraceReader};
use tcpmetro::tcp::TcpConfig;

fn read_all(path: &Path) -> (Vec<PacketRecord>, tcpmetro::ingest::IngestStats) {
    let (_, mut r) = TraceReader::new(BufReader::new(File::open(path).unwrap())).unwrap();
    let mut v = Vec::new();
    while let Some(p) = r.next_packet().unwrap() {
        v.push(p);
    }
    (v, *r.stats())
}

#[test]
fn anonymized_trace_decodes_to_same_records() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, out) = (dir.path().join("raw.pcap"), dir.path().join("anon.pcap"));
    write_trace(&raw, &random_trace(&mut rng(5), 120));
    let a = anon();
    let stats = anonymize_trace(&raw, &out, &a).unwrap();
    let (before, s1) = read_all(&raw);
    let (after, s2) = read_all(&out);
    assert_eq!(stats.packets_total, s1.packets_total);
    assert_eq!(s1, s2);
    assert!(s1.is_consistent());
    assert_eq!(before.len(), after.len());
    for (b, x) in before.iter().zip(&after) {
        assert_eq!(x.src, a.anonymize(b.src));
        assert_eq!(x.dst, a.anonymize(b.dst));
        let mut y = x.clone();
        y.src = b.src;
        y.dst = b.dst;
        assert_eq!(&y, b);
    }
    let bytes: u64 = before.iter().map(|p| u64::from(p.ip_total_length)).sum();
    assert_eq!(bytes, s1.ipv4_bytes);
}

#[test]
fn zero_prf_rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, out) = (dir.path().join("raw.pcap"), dir.path().join("same.pcap"));
    write_trace(&raw, &random_trace(&mut rng(6), 40));
    anonymize_trace(&raw, &out, &Anonymizer::with_prf(ZeroPrf)).unwrap();
    assert_eq!(std::fs::read(&raw).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn flows_are_invariant_under_anonymization() {
    let frames = random_trace(&mut rng(8), 200);
    let a = anon();
    let shapes = |anonymize: bool| {
        let mut t = FlowTable::new(DEFAULT_IDLE_TIMEOUT_US, TcpConfig::default());
        for (ts, f) in &frames {
            let mut rec = f.record(*ts);
            if anonymize {
                rec.src = a.anonymize(rec.src);
                rec.dst = a.anonymize(rec.dst);
            }
            t.update_flow(&rec);
        }
        let mut v: Vec<_> = t
            .finish_all(frames.last().unwrap().0)
            .iter()
            .map(|f| {
                let tcp = f.tcp_state().map(|s| (s.data_counts, s.flag_counts, s.late_fillers));
                (f.first_ts, f.length(), f.bytes(), f.duration_us(), tcp, f.events.len(), f.establishment)
            })
            .collect();
        v.sort_by_key(|x| (x.0, x.1, x.2, x.3, x.5));
        v
    };
    assert_eq!(shapes(false), shapes(true));
}

#[test]
fn bad_magic_is_rejected() {
    let err = TraceReader::new(&b"\x00\x01\x02\x03rest of a file that is long enough"[..]).err().unwrap();
    assert!(matches!(err, IngestError::BadMagic(0x0302_0100)), "{err}");
}

#[test]
fn distinct_inputs_map_to_distinct_outputs() {
    let a = anon();
    let mut r = rng(11);
    let mut inputs = HashSet::with_capacity(1 << 20);
    while inputs.len() < 1_000_000 {
        inputs.insert(r.gen::<u32>());
    }
    let outputs: HashSet<u32> = inputs.iter().map(|&x| a.anonymize_u32(x)).collect();
    assert_eq!(outputs.len(), inputs.len());
}

proptest! {
    #[test]
    fn shared_prefix_length_is_kept(x: u32, y: u32) {
        let a = anon();
        prop_assert_eq!(common_prefix_len(a.anonymize_u32(x), a.anonymize_u32(y)), common_prefix_len(x, y));
    }

    #[test]
    fn neighbours_share_prefix(x: u32, bit in 0u32..32) {
        let a = anon();
        let y = x ^ (1 << bit);
        let (ax, ay) = (a.anonymize(Ipv4Addr::from(x)), a.anonymize(Ipv4Addr::from(y)));
        prop_assert_eq!(common_prefix_len(u32::from(ax), u32::from(ay)), 31 - bit);
    }
}
