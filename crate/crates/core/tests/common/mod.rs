#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tcpmetro::anon::AnonKey;
use tcpmetro::classify::{GeoDb, PrefixConfig, ServiceDb};
use tcpmetro::ingest::{LinkType, TcpFlags as F, Timestamp};
use tcpmetro::pipeline::Context;
use tcpmetro::synth::{Body, FrameSpec, TcpConn, TraceBuilder};
use tcpmetro::tcp::{DataClass, TcpConfig};

pub const KEY_HEX: &str = "8f3a19c2d04b7e61a5c0f2e9b3d87416";

pub type Frames = Vec<(Timestamp, FrameSpec)>;

pub fn key() -> AnonKey {
    AnonKey::from_hex(KEY_HEX).unwrap()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn write_trace(path: &Path, frames: &Frames) {
    let mut t = TraceBuilder::new(LinkType::Ethernet);
    for (ts, f) in frames {
        t.push(*ts, f);
    }
    t.write_to(path).unwrap();
}

pub fn context(idle_timeout_us: u64) -> Context {
    let prefixes = PrefixConfig::parse("lan 10.0.0.0/8\nman 196.192.32.0/24\n", "test").unwrap();
    Context::new(prefixes, GeoDb::default(), ServiceDb::default(), TcpConfig::default(), idle_timeout_us, anon())
}

pub fn anon() -> tcpmetro::anon::Anonymizer {
    tcpmetro::anon::Anonymizer::new(&key())
}

fn inside(rng: &mut StdRng) -> [u8; 4] {
    [10, 0, rng.gen_range(0..4), rng.gen_range(1..40)]
}

fn outside(rng: &mut StdRng) -> [u8; 4] {
    match rng.gen_range(0..3) {
        0 => [196, 192, 32, rng.gen_range(1..250)],
        _ => [rng.gen_range(11..223), rng.gen(), rng.gen(), rng.gen_range(1..255)],
    }
}

fn host_pair(rng: &mut StdRng) -> ([u8; 4], [u8; 4]) {
    let a = inside(rng);
    let b = if rng.gen_bool(0.2) { inside(rng) } else { outside(rng) };
    (a, b)
}

/// A mixed trace of TCP connections, UDP exchanges, ICMP and other
/// protocols spread over ten minutes, including idle gaps longer than the
/// default timeout, closes, resets and reused tuples.
pub fn random_trace(rng: &mut StdRng, conversations: usize) -> Frames {
    let mut out: Frames = Vec::new();
    let mut reusable: Vec<TcpConn> = Vec::new();
    for _ in 0..conversations {
        let mut t = rng.gen_range(0..600_000_000u64);
        let kind = rng.gen_range(0..20);
        if kind < 12 {
            let conn = if !reusable.is_empty() && rng.gen_bool(0.15) {
                reusable[rng.gen_range(0..reusable.len())]
            } else {
                let (c, s) = host_pair(rng);
                let port = [80, 443, 25, 22, 8080, 5000][rng.gen_range(0..6)];
                TcpConn::new((c, rng.gen_range(1024..65535)), (s, port))
            };
            reusable.push(conn);
            tcp_conversation(rng, conn, &mut t, &mut out);
        } else if kind < 17 {
            let (a, b) = host_pair(rng);
            let (pa, pb) = (rng.gen_range(1024..65535), [53, 123, 5060][rng.gen_range(0..3)]);
            for _ in 0..rng.gen_range(1..8) {
                t += gap(rng);
                let f = if rng.gen_bool(0.5) {
                    FrameSpec::udp(a, b, pa, pb, rng.gen_range(0..400))
                } else {
                    FrameSpec::udp(b, a, pb, pa, rng.gen_range(0..400))
                };
                out.push((Timestamp(t), f));
            }
        } else {
            let (a, b) = host_pair(rng);
            for _ in 0..rng.gen_range(1..4) {
                t += gap(rng);
                let f = if kind < 19 {
                    FrameSpec::icmp(a, b, 56)
                } else {
                    FrameSpec::other(a, b, [2, 47, 50][rng.gen_range(0..3)], 40)
                };
                out.push((Timestamp(t), f));
            }
        }
    }
    out.sort_by_key(|(ts, _)| *ts);
    out
}

fn gap(rng: &mut StdRng) -> u64 {
    match rng.gen_range(0..20) {
        0 => rng.gen_range(61_000_000..120_000_000),
        1 => rng.gen_range(3_000_000..30_000_000),
        _ => rng.gen_range(100..200_000),
    }
}

fn tcp_conversation(rng: &mut StdRng, conn: TcpConn, t: &mut u64, out: &mut Frames) {
    let rtt = rng.gen_range(1_000..300_000u64);
    let (mut cs, mut ss) = (rng.gen::<u32>(), rng.gen::<u32>());
    let push = |out: &mut Frames, t: u64, f: FrameSpec| out.push((Timestamp(t), f));
    let answered = rng.gen_range(0..10) > 0;
    push(out, *t, conn.c2s(F::SYN, cs, 0, 0));
    if !answered {
        if rng.gen_bool(0.5) {
            *t += 3_000_000;
            push(out, *t, conn.c2s(F::SYN, cs, 0, 0));
        } else {
            *t += rtt;
            push(out, *t, conn.s2c(F::RST | F::ACK, 0, cs.wrapping_add(1), 0));
        }
        return;
    }
    *t += rtt / 2;
    push(out, *t, conn.s2c(F::SYN | F::ACK, ss, cs.wrapping_add(1), 0));
    *t += rtt / 2;
    cs = cs.wrapping_add(1);
    ss = ss.wrapping_add(1);
    push(out, *t, conn.c2s(F::ACK, cs, ss, 0));
    for _ in 0..rng.gen_range(0..30) {
        *t += gap(rng);
        let len = rng.gen_range(1..1460);
        if rng.gen_bool(0.6) {
            push(out, *t, conn.c2s(F::ACK | F::PSH, cs, ss, len));
            if rng.gen_bool(0.1) {
                *t += rtt * 2;
                push(out, *t, conn.c2s(F::ACK | F::PSH, cs, ss, len));
            }
            cs = cs.wrapping_add(len as u32);
            *t += rtt / 2;
            push(out, *t, conn.s2c(F::ACK, ss, cs, 0));
        } else {
            push(out, *t, conn.s2c(F::ACK | F::PSH, ss, cs, len));
            ss = ss.wrapping_add(len as u32);
            *t += rtt / 2;
            push(out, *t, conn.c2s(F::ACK, cs, ss, 0));
        }
    }
    *t += gap(rng);
    match rng.gen_range(0..4) {
        0 => push(out, *t, conn.c2s(F::RST | F::ACK, cs, ss, 0)),
        1 => {}
        _ => {
            push(out, *t, conn.c2s(F::FIN | F::ACK, cs, ss, 0));
            *t += rtt / 2;
            push(out, *t, conn.s2c(F::FIN | F::ACK, ss, cs.wrapping_add(1), 0));
            *t += rtt / 2;
            push(out, *t, conn.c2s(F::ACK, cs.wrapping_add(1), ss.wrapping_add(1), 0));
        }
    }
}

/// Same frame with source and destination (addresses and ports) swapped.
pub fn reversed(f: &FrameSpec) -> FrameSpec {
    let mut r = f.clone();
    std::mem::swap(&mut r.src, &mut r.dst);
    match &mut r.body {
        Body::Tcp(t) => std::mem::swap(&mut t.src_port, &mut t.dst_port),
        Body::Udp { src_port, dst_port, .. } => std::mem::swap(src_port, dst_port),
        _ => {}
    }
    r
}

/// One bulk transfer from client to server with injected spurious, plain
/// and fast retransmissions, swapped segment pairs and segments lost
/// upstream of the capture point. Each frame carries the class its data
/// must receive, as decided when the injection was made.
pub struct Bulk {
    pub conn: TcpConn,
    pub frames: Frames,
    pub labels: Vec<Option<DataClass>>,
    /// Whether each frame travels client to server.
    pub from_client: Vec<bool>,
}

const MSS: u32 = 1000;

impl Bulk {
    fn push(&mut self, t: u64, from_client: bool, f: FrameSpec, label: Option<DataClass>) {
        self.frames.push((Timestamp(t), f));
        self.labels.push(label);
        self.from_client.push(from_client);
    }

    pub fn label_counts(&self) -> [u64; 5] {
        let mut c = [0u64; 5];
        for l in self.labels.iter().flatten() {
            c[l.index()] += 1;
        }
        c
    }
}

pub fn bulk_transfer(rng: &mut StdRng, min_packets: usize) -> Bulk {
    let conn = TcpConn::new(([10, 1, 0, 7], 51000), ([203, 0, 113, 80], 80));
    let mut b = Bulk { conn, frames: Vec::new(), labels: Vec::new(), from_client: Vec::new() };
    let isn: u32 = rng.gen();
    let sisn: u32 = rng.gen();
    let mut t = 1_000_000u64;
    b.push(t, true, conn.c2s(F::SYN, isn, 0, 0), None);
    t += 20_000;
    b.push(t, false, conn.s2c(F::SYN | F::ACK, sisn, isn.wrapping_add(1), 0), None);
    t += 20_000;
    let ack = sisn.wrapping_add(1);
    b.push(t, true, conn.c2s(F::ACK, isn.wrapping_add(1), ack, 0), None);
    let seg = |i: u32| isn.wrapping_add(1).wrapping_add(i * MSS);
    let data = |i: u32| conn.c2s(F::ACK | F::PSH, seg(i), ack, MSS as usize);
    let ack_to = |i: u32| conn.s2c(F::ACK, ack, seg(i), 0);
    // segments 0..next have been sent; all acked up to `acked`
    let mut next = 0u32;
    use DataClass::*;
    while b.frames.len() < min_packets {
        t += 1_000;
        let roll = rng.gen_range(0..100);
        if roll < 70 || next < 2 {
            b.push(t, true, data(next), Some(InOrder));
            t += 1_000;
            b.push(t, false, ack_to(next + 1), None);
            next += 1;
        } else if roll < 78 {
            let j = rng.gen_range(0..next);
            b.push(t, true, data(j), Some(RetransmissionSpurious));
        } else if roll < 86 {
            b.push(t, true, data(next), Some(InOrder));
            t += 200_000;
            b.push(t, true, data(next), Some(RetransmissionPlain));
            t += 1_000;
            b.push(t, false, ack_to(next + 1), None);
            next += 1;
        } else if roll < 92 {
            // segment `next` dies after the capture point
            let lost = next;
            b.push(t, true, data(lost), Some(InOrder));
            for k in 1..=3 {
                t += 1_000;
                b.push(t, true, data(lost + k), Some(InOrder));
                t += 500;
                b.push(t, false, ack_to(lost), None);
            }
            t += 1_000;
            b.push(t, true, data(lost), Some(RetransmissionFast));
            t += 1_000;
            b.push(t, false, ack_to(lost + 4), None);
            next += 4;
        } else if roll < 97 {
            b.push(t, true, data(next + 1), Some(InOrder));
            t += 1_000;
            b.push(t, true, data(next), Some(OutOfOrder));
            t += 1_000;
            b.push(t, false, ack_to(next + 2), None);
            next += 2;
        } else {
            // segment `next` dies before the capture point and is resent late
            b.push(t, true, data(next + 1), Some(InOrder));
            t += 40_000;
            b.push(t, true, data(next), Some(InOrder));
            t += 1_000;
            b.push(t, false, ack_to(next + 2), None);
            next += 2;
        }
    }
    t += 1_000;
    b.push(t, true, conn.c2s(F::FIN | F::ACK, seg(next), ack, 0), None);
    t += 1_000;
    b.push(t, false, conn.s2c(F::FIN | F::ACK, ack, seg(next).wrapping_add(1), 0), None);
    b
}

/// A small corpus: traces, prefix file, geo database, services file and a
/// config naming them, all under `dir`. Returns the config path.
pub fn write_corpus(dir: &Path, traces: usize, conversations: usize) -> PathBuf {
    let mut names = Vec::new();
    for i in 0..traces {
        let frames = random_trace(&mut rng(1000 + i as u64), conversations);
        let name = format!("trace{i}.pcap");
        write_trace(&dir.join(&name), &frames);
        names.push(format!("\"{name}\""));
    }
    let bulk = bulk_transfer(&mut rng(77), 2_000);
    write_trace(&dir.join("bulk.pcap"), &bulk.frames);
    names.push("\"bulk.pcap\"".into());
    std::fs::write(dir.join("prefixes.txt"), "lan 10.0.0.0/8\nman 196.192.32.0/24\n").unwrap();
    std::fs::write(
        dir.join("geo.csv"),
        "# cidr,continent\n11.0.0.0/8,North America\n80.0.0.0/4,Europe\n41.0.0.0/8,Africa\n\
         110.0.0.0/7,Asia\n200.0.0.0/6,South America\n203.0.0.0/8,Oceania\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("services"),
        "http 80/tcp www\nhttps 443/tcp\nsmtp 25/tcp mail\nssh 22/tcp\ndomain 53/udp\nhttp-alt 8080/tcp\n",
    )
    .unwrap();
    let cfg = format!(
        "inputs = [{}]\nprefix_file = \"prefixes.txt\"\ngeo_db = \"geo.csv\"\nservices = \"services\"\n\
         anon_key_hex = \"{KEY_HEX}\"\nformat = \"text\"\n",
        names.join(", ")
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

/// Relative path to contents, for comparing output directories.
pub fn read_dir_files(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut m = std::collections::BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        m.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
    }
    m
}
