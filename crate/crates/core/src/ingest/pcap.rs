use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::decode::decode_frame;
use super::reorder::ReorderBuffer;
use super::{IngestError, IngestStats, PacketRecord, Timestamp};

pub const PCAP_MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const PCAP_MAGIC_NANOS: u32 = 0xa1b2_3c4d;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
/// Hard ceiling on a single record, whatever the header's snap length says.
const MAX_RECORD_LEN: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    RawIp,
}

impl LinkType {
    pub fn from_raw(v: u32) -> Option<LinkType> {
        match v {
            1 => Some(LinkType::Ethernet),
            101 => Some(LinkType::RawIp),
            _ => None,
        }
    }

    pub fn raw(self) -> u32 {
        match self {
            LinkType::Ethernet => 1,
            LinkType::RawIp => 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampResolution {
    Micros,
    Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureMeta {
    pub link_type: LinkType,
    pub snap_length: u32,
    pub resolution: TimestampResolution,
    pub big_endian: bool,
    pub version: (u16, u16),
}

/// One pcap record exactly as stored, plus its normalized timestamp.
#[derive(Debug, Clone)]
pub struct RawFrame {
    /// Byte offset of the record header in the file.
    pub offset: u64,
    pub header: [u8; RECORD_HEADER_LEN],
    pub ts: Timestamp,
    pub orig_len: u32,
    pub data: Vec<u8>,
}

/// Streams raw records from a classic pcap file in file order.
pub struct PcapReader<R> {
    inner: R,
    meta: CaptureMeta,
    global_header: [u8; GLOBAL_HEADER_LEN],
    offset: u64,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self, IngestError> {
        let mut hdr = [0u8; GLOBAL_HEADER_LEN];
        let got = read_full(&mut inner, &mut hdr)?;
        if got < 4 {
            return Err(IngestError::TruncatedHeader(got));
        }
        let magic_le = u32::from_le_bytes([hdr[0], hdr[1], hdr[2], hdr[3]]);
        let magic_be = u32::from_be_bytes([hdr[0], hdr[1], hdr[2], hdr[3]]);
        let (big_endian, resolution) = match (magic_le, magic_be) {
            (PCAP_MAGIC_MICROS, _) => (false, TimestampResolution::Micros),
            (PCAP_MAGIC_NANOS, _) => (false, TimestampResolution::Nanos),
            (_, PCAP_MAGIC_MICROS) => (true, TimestampResolution::Micros),
            (_, PCAP_MAGIC_NANOS) => (true, TimestampResolution::Nanos),
            _ => return Err(IngestError::BadMagic(magic_le)),
        };
        if got < GLOBAL_HEADER_LEN {
            return Err(IngestError::TruncatedHeader(got));
        }
        let u16_at = |i: usize| {
            let b = [hdr[i], hdr[i + 1]];
            if big_endian {
                u16::from_be_bytes(b)
            } else {
                u16::from_le_bytes(b)
            }
        };
        let u32_at = |i: usize| read_u32(&hdr[i..i + 4], big_endian);
        let snap_length = u32_at(16);
        let raw_link = u32_at(20);
        let link_type =
            LinkType::from_raw(raw_link).ok_or(IngestError::UnsupportedLinkType(raw_link))?;
        if snap_length == 0 {
            return Err(IngestError::ZeroSnapLength);
        }
        let meta = CaptureMeta {
            link_type,
            snap_length,
            resolution,
            big_endian,
            version: (u16_at(4), u16_at(6)),
        };
        Ok(PcapReader { inner, meta, global_header: hdr, offset: GLOBAL_HEADER_LEN as u64 })
    }

    pub fn meta(&self) -> &CaptureMeta {
        &self.meta
    }

    /// The 24 global-header bytes as read, for verbatim rewriting.
    pub fn global_header(&self) -> &[u8; GLOBAL_HEADER_LEN] {
        &self.global_header
    }

    /// Next record, `Ok(None)` at a clean end of file.
    pub fn next_frame(&mut self) -> Result<Option<RawFrame>, IngestError> {
        let offset = self.offset;
        let mut header = [0u8; RECORD_HEADER_LEN];
        let got = read_full(&mut self.inner, &mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_HEADER_LEN {
            return Err(IngestError::CorruptRecord {
                offset,
                reason: format!("record header cut after {got} bytes"),
            });
        }
        let be = self.meta.big_endian;
        let ts_sec = read_u32(&header[0..4], be);
        let ts_frac = read_u32(&header[4..8], be);
        let incl_len = read_u32(&header[8..12], be);
        let orig_len = read_u32(&header[12..16], be);
        if incl_len > MAX_RECORD_LEN.max(self.meta.snap_length) {
            return Err(IngestError::CorruptRecord {
                offset,
                reason: format!("captured length {incl_len} exceeds snap length"),
            });
        }
        let micros = match self.meta.resolution {
            TimestampResolution::Micros => u64::from(ts_frac),
            TimestampResolution::Nanos => u64::from(ts_frac) / 1000,
        };
        let mut data = vec![0u8; incl_len as usize];
        let got = read_full(&mut self.inner, &mut data)?;
        if got < data.len() {
            return Err(IngestError::CorruptRecord {
                offset,
                reason: format!("captured length {incl_len} but only {got} bytes remain"),
            });
        }
        self.offset += (RECORD_HEADER_LEN + data.len()) as u64;
        Ok(Some(RawFrame {
            offset,
            header,
            ts: Timestamp(u64::from(ts_sec) * 1_000_000 + micros),
            orig_len,
            data,
        }))
    }
}

fn read_u32(b: &[u8], big_endian: bool) -> u32 {
    let b = [b[0], b[1], b[2], b[3]];
    if big_endian {
        u32::from_be_bytes(b)
    } else {
        u32::from_le_bytes(b)
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Decoding reader: yields IPv4 [`PacketRecord`]s in timestamp order.
pub struct TraceReader<R> {
    pcap: PcapReader<R>,
    stats: IngestStats,
    reorder: ReorderBuffer,
    drained: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(inner: R) -> Result<(CaptureMeta, Self), IngestError> {
        let pcap = PcapReader::new(inner)?;
        let meta = *pcap.meta();
        Ok((
            meta,
            TraceReader {
                pcap,
                stats: IngestStats::default(),
                reorder: ReorderBuffer::default(),
                drained: false,
            },
        ))
    }

    pub fn meta(&self) -> &CaptureMeta {
        self.pcap.meta()
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    /// Next decodable IPv4 packet; non-IPv4 frames are counted and skipped.
    pub fn next_packet(&mut self) -> Result<Option<PacketRecord>, IngestError> {
        loop {
            if self.drained {
                let out = self.reorder.pop();
                self.sync_violations();
                return Ok(out);
            }
            match self.pcap.next_frame()? {
                Some(frame) => {
                    let kind = decode_frame(self.pcap.meta().link_type, &frame.data, frame.ts);
                    self.stats.record(&kind);
                    if let super::FrameKind::Ipv4(rec) = kind {
                        if let Some(out) = self.reorder.push(rec) {
                            self.sync_violations();
                            return Ok(Some(out));
                        }
                    }
                }
                None => self.drained = true,
            }
        }
    }

    fn sync_violations(&mut self) {
        self.stats.monotonicity_violations = self.reorder.violations();
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<PacketRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packet().transpose()
    }
}

pub fn open_trace(
    path: impl AsRef<Path>,
) -> Result<(CaptureMeta, TraceReader<BufReader<File>>), IngestError> {
    let file = File::open(path)?;
    TraceReader::new(BufReader::new(file))
}

/// Writes classic pcap records. The global header is supplied by the caller
/// so a rewritten trace can keep the original one byte for byte.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl PcapWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, global_header: &[u8; 24]) -> io::Result<Self> {
        PcapWriter::new(BufWriter::new(File::create(path)?), global_header)
    }
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W, global_header: &[u8; 24]) -> io::Result<Self> {
        out.write_all(global_header)?;
        Ok(PcapWriter { out })
    }

    /// Standard little-endian microsecond header.
    pub fn standard_header(link: LinkType, snap_length: u32) -> [u8; 24] {
        let mut h = [0u8; 24];
        h[0..4].copy_from_slice(&PCAP_MAGIC_MICROS.to_le_bytes());
        h[4..6].copy_from_slice(&2u16.to_le_bytes());
        h[6..8].copy_from_slice(&4u16.to_le_bytes());
        h[16..20].copy_from_slice(&snap_length.to_le_bytes());
        h[20..24].copy_from_slice(&link.raw().to_le_bytes());
        h
    }

    pub fn write_raw(&mut self, header: &[u8; 16], data: &[u8]) -> io::Result<()> {
        self.out.write_all(header)?;
        self.out.write_all(data)
    }

    /// Little-endian microsecond record; `orig_len` defaults to `data.len()`.
    pub fn write_packet(&mut self, ts: Timestamp, data: &[u8], orig_len: Option<u32>) -> io::Result<()> {
        let mut h = [0u8; 16];
        h[0..4].copy_from_slice(&((ts.0 / 1_000_000) as u32).to_le_bytes());
        h[4..8].copy_from_slice(&((ts.0 % 1_000_000) as u32).to_le_bytes());
        h[8..12].copy_from_slice(&(data.len() as u32).to_le_bytes());
        h[12..16].copy_from_slice(&orig_len.unwrap_or(data.len() as u32).to_le_bytes());
        self.write_raw(&h, data)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn header(magic: [u8; 4], link: u32, big_endian: bool) -> Vec<u8> {
        let mut h = magic.to_vec();
        let put16 = |v: u16| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
        let put32 = |v: u32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
        h.extend(put16(2));
        h.extend(put16(4));
        h.extend(put32(0));
        h.extend(put32(0));
        h.extend(put32(65535));
        h.extend(put32(link));
        h
    }

    #[test]
    fn little_endian_micro_ethernet() {
        let bytes = header(PCAP_MAGIC_MICROS.to_le_bytes(), 1, false);
        let r = PcapReader::new(Cursor::new(bytes)).unwrap();
        assert_eq!(r.meta().link_type, LinkType::Ethernet);
        assert_eq!(r.meta().resolution, TimestampResolution::Micros);
        assert!(!r.meta().big_endian);
        assert_eq!(r.meta().snap_length, 65535);
    }

    #[test]
    fn nanosecond_and_big_endian_variants() {
        let r = PcapReader::new(Cursor::new(header(PCAP_MAGIC_NANOS.to_le_bytes(), 101, false)))
            .unwrap();
        assert_eq!(r.meta().resolution, TimestampResolution::Nanos);
        assert_eq!(r.meta().link_type, LinkType::RawIp);
        let r = PcapReader::new(Cursor::new(header(PCAP_MAGIC_MICROS.to_be_bytes(), 1, true)))
            .unwrap();
        assert!(r.meta().big_endian);
        let r = PcapReader::new(Cursor::new(header(PCAP_MAGIC_NANOS.to_be_bytes(), 1, true)))
            .unwrap();
        assert_eq!(r.meta().resolution, TimestampResolution::Nanos);
    }

    #[test]
    fn short_and_bad_files() {
        let err = PcapReader::new(Cursor::new(vec![0xd4, 0xc3, 0xb2, 0xa1, 0, 0, 0, 0, 0, 0]))
            .err()
            .unwrap();
        assert!(matches!(err, IngestError::TruncatedHeader(10)));
        let err = PcapReader::new(Cursor::new(vec![0u8; 40])).err().unwrap();
        assert!(matches!(err, IngestError::BadMagic(0)));
        let err = PcapReader::new(Cursor::new(header(PCAP_MAGIC_MICROS.to_le_bytes(), 113, false)))
            .err()
            .unwrap();
        assert!(matches!(err, IngestError::UnsupportedLinkType(113)));
    }

    #[test]
    fn nanosecond_timestamps_truncate_to_micros() {
        let mut bytes = header(PCAP_MAGIC_NANOS.to_le_bytes(), 101, false);
        bytes.extend(7u32.to_le_bytes());
        bytes.extend(123_456_789u32.to_le_bytes());
        bytes.extend(0u32.to_le_bytes());
        bytes.extend(0u32.to_le_bytes());
        let mut r = PcapReader::new(Cursor::new(bytes)).unwrap();
        let f = r.next_frame().unwrap().unwrap();
        assert_eq!(f.ts, Timestamp(7_123_456));
        assert!(r.next_frame().unwrap().is_none());
    }

    #[test]
    fn record_running_past_eof_reports_offset() {
        let mut bytes = header(PCAP_MAGIC_MICROS.to_le_bytes(), 1, false);
        bytes.extend(0u32.to_le_bytes());
        bytes.extend(0u32.to_le_bytes());
        bytes.extend(100u32.to_le_bytes());
        bytes.extend(100u32.to_le_bytes());
        bytes.extend([0u8; 30]);
        let mut r = PcapReader::new(Cursor::new(bytes)).unwrap();
        match r.next_frame() {
            Err(IngestError::CorruptRecord { offset, .. }) => assert_eq!(offset, 24),
            other => panic!("unexpected {other:?}"),
        }
    }
}
