//! Synthetic frame and trace construction.
//!
//! Used by the test suites and fixtures to build byte-exact Ethernet/IPv4
//! frames with valid checksums, and to write them out as pcap files.

use std::io;
use std::path::Path;

use crate::checksum::{internet_checksum, transport_checksum};
use crate::ingest::{decode_frame, FrameKind, LinkType, PacketRecord, PcapWriter, TcpFlags, Timestamp};

#[derive(Debug, Clone)]
pub struct TcpSpec {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub window: u16,
    /// Raw option bytes; padded with EOL to a multiple of four.
    pub options: Vec<u8>,
    pub payload: usize,
}

impl Default for TcpSpec {
    fn default() -> Self {
        TcpSpec {
            src_port: 40000,
            dst_port: 80,
            seq: 0,
            ack: 0,
            flags: TcpFlags::ACK,
            window: 65535,
            options: Vec::new(),
            payload: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Body {
    Tcp(TcpSpec),
    Udp { src_port: u16, dst_port: u16, payload: usize },
    Icmp { payload: usize },
    Other { protocol: u8, payload: usize },
}

#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub src: [u8; 4],
    pub dst: [u8; 4],
    pub ttl: u8,
    pub ident: u16,
    /// In 8-byte units.
    pub fragment_offset: u16,
    pub more_fragments: bool,
    pub body: Body,
}

impl FrameSpec {
    fn new(src: [u8; 4], dst: [u8; 4], body: Body) -> Self {
        FrameSpec { src, dst, ttl: 64, ident: 0x1234, fragment_offset: 0, more_fragments: false, body }
    }

    pub fn tcp(src: [u8; 4], dst: [u8; 4], spec: TcpSpec) -> Self {
        Self::new(src, dst, Body::Tcp(spec))
    }

    pub fn udp(src: [u8; 4], dst: [u8; 4], src_port: u16, dst_port: u16, payload: usize) -> Self {
        Self::new(src, dst, Body::Udp { src_port, dst_port, payload })
    }

    pub fn icmp(src: [u8; 4], dst: [u8; 4], payload: usize) -> Self {
        Self::new(src, dst, Body::Icmp { payload })
    }

    pub fn other(src: [u8; 4], dst: [u8; 4], protocol: u8, payload: usize) -> Self {
        Self::new(src, dst, Body::Other { protocol, payload })
    }

    fn protocol(&self) -> u8 {
        match &self.body {
            Body::Tcp(_) => 6,
            Body::Udp { .. } => 17,
            Body::Icmp { .. } => 1,
            Body::Other { protocol, .. } => *protocol,
        }
    }

    fn transport_bytes(&self) -> Vec<u8> {
        match &self.body {
            Body::Tcp(t) => {
                let mut opts = t.options.clone();
                while opts.len() % 4 != 0 {
                    opts.push(0);
                }
                let hl = 20 + opts.len();
                let mut seg = Vec::with_capacity(hl + t.payload);
                seg.extend(t.src_port.to_be_bytes());
                seg.extend(t.dst_port.to_be_bytes());
                seg.extend(t.seq.to_be_bytes());
                seg.extend(t.ack.to_be_bytes());
                seg.push(((hl / 4) as u8) << 4);
                seg.push(t.flags);
                seg.extend(t.window.to_be_bytes());
                seg.extend([0, 0, 0, 0]);
                seg.extend(&opts);
                seg.extend(payload_bytes(t.payload));
                if self.fragment_offset == 0 {
                    let c = transport_checksum(self.src, self.dst, 6, &seg);
                    seg[16..18].copy_from_slice(&c.to_be_bytes());
                }
                seg
            }
            Body::Udp { src_port, dst_port, payload } => {
                let len = 8 + payload;
                let mut seg = Vec::with_capacity(len);
                seg.extend(src_port.to_be_bytes());
                seg.extend(dst_port.to_be_bytes());
                seg.extend((len as u16).to_be_bytes());
                seg.extend([0, 0]);
                seg.extend(payload_bytes(*payload));
                if self.fragment_offset == 0 {
                    let mut c = transport_checksum(self.src, self.dst, 17, &seg);
                    if c == 0 {
                        c = 0xffff;
                    }
                    seg[6..8].copy_from_slice(&c.to_be_bytes());
                }
                seg
            }
            Body::Icmp { payload } | Body::Other { payload, .. } => payload_bytes(*payload),
        }
    }

    /// The IPv4 datagram.
    pub fn build_ip(&self) -> Vec<u8> {
        let body = self.transport_bytes();
        let total = 20 + body.len();
        let mut ip = Vec::with_capacity(total);
        ip.push(0x45);
        ip.push(0);
        ip.extend((total as u16).to_be_bytes());
        ip.extend(self.ident.to_be_bytes());
        let frag = (self.fragment_offset & 0x1fff) | if self.more_fragments { 0x2000 } else { 0 };
        ip.extend(frag.to_be_bytes());
        ip.push(self.ttl);
        ip.push(self.protocol());
        ip.extend([0, 0]);
        ip.extend(self.src);
        ip.extend(self.dst);
        let c = internet_checksum(&ip);
        ip[10..12].copy_from_slice(&c.to_be_bytes());
        ip.extend(body);
        ip
    }

    pub fn build_ethernet(&self) -> Vec<u8> {
        let mut f = vec![0x02, 0, 0, 0, 0, 0x02, 0x02, 0, 0, 0, 0, 0x01, 0x08, 0x00];
        f.extend(self.build_ip());
        f
    }

    pub fn build_raw(&self) -> Vec<u8> {
        self.build_ip()
    }

    pub fn build(&self, link: LinkType) -> Vec<u8> {
        match link {
            LinkType::Ethernet => self.build_ethernet(),
            LinkType::RawIp => self.build_raw(),
        }
    }

    /// Decoded record of this frame, as the ingest stage would produce it.
    pub fn record(&self, ts: Timestamp) -> PacketRecord {
        match decode_frame(LinkType::RawIp, &self.build_raw(), ts) {
            FrameKind::Ipv4(r) => r,
            other => panic!("synthetic frame did not decode: {other:?}"),
        }
    }
}

fn payload_bytes(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i % 251) as u8).collect()
}

/// An in-memory pcap trace.
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    pub link: LinkType,
    /// Bytes kept per frame; `None` captures everything.
    pub snap: Option<usize>,
    frames: Vec<(Timestamp, Vec<u8>, u32)>,
}

impl TraceBuilder {
    pub fn new(link: LinkType) -> Self {
        TraceBuilder { link, snap: None, frames: Vec::new() }
    }

    pub fn with_snap(mut self, snap: usize) -> Self {
        self.snap = Some(snap);
        self
    }

    pub fn push(&mut self, ts: Timestamp, frame: &FrameSpec) -> &mut Self {
        let bytes = frame.build(self.link);
        self.push_bytes(ts, bytes)
    }

    pub fn push_bytes(&mut self, ts: Timestamp, mut bytes: Vec<u8>) -> &mut Self {
        let orig = bytes.len() as u32;
        if let Some(snap) = self.snap {
            bytes.truncate(snap);
        }
        self.frames.push((ts, bytes, orig));
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let snap = self.snap.unwrap_or(65535) as u32;
        let header = PcapWriter::<Vec<u8>>::standard_header(self.link, snap);
        let mut w = PcapWriter::new(Vec::new(), &header).expect("in-memory write");
        for (ts, data, orig) in &self.frames {
            w.write_packet(*ts, data, Some(*orig)).expect("in-memory write");
        }
        w.finish().expect("in-memory write")
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }
}

/// Endpoint-pair helper that builds TCP segments of one connection.
#[derive(Debug, Clone, Copy)]
pub struct TcpConn {
    pub client: ([u8; 4], u16),
    pub server: ([u8; 4], u16),
}

impl TcpConn {
    pub fn new(client: ([u8; 4], u16), server: ([u8; 4], u16)) -> Self {
        TcpConn { client, server }
    }

    /// Client-to-server segment.
    pub fn c2s(&self, flags: u8, seq: u32, ack: u32, payload: usize) -> FrameSpec {
        self.seg(true, flags, seq, ack, payload, 65535, Vec::new())
    }

    /// Server-to-client segment.
    pub fn s2c(&self, flags: u8, seq: u32, ack: u32, payload: usize) -> FrameSpec {
        self.seg(false, flags, seq, ack, payload, 65535, Vec::new())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn seg(
        &self,
        from_client: bool,
        flags: u8,
        seq: u32,
        ack: u32,
        payload: usize,
        window: u16,
        options: Vec<u8>,
    ) -> FrameSpec {
        let (src, dst) = if from_client { (self.client, self.server) } else { (self.server, self.client) };
        FrameSpec::tcp(
            src.0,
            dst.0,
            TcpSpec { src_port: src.1, dst_port: dst.1, seq, ack, flags, window, options, payload },
        )
    }
}
