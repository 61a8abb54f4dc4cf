use std::net::Ipv4Addr;

use super::options::decode_tcp_options;
use super::{LinkType, PacketRecord, TcpFlags, TcpHeader, Timestamp, Transport};

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_IGMP: u8 = 2;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Outcome of decoding one captured frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameKind {
    Ipv4(PacketRecord),
    Ipv6,
    NonIp,
    /// Too few bytes captured to read the IPv4 or transport header.
    Truncated,
    Malformed(&'static str),
}

/// Where the IPv4 header and, when present, the transport header start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Location {
    pub ip_offset: usize,
    pub header_length: usize,
    pub total_length: usize,
    pub protocol: u8,
    /// `None` for non-first fragments.
    pub transport_offset: Option<usize>,
}

/// Offset of the IPv4 header inside a link-layer frame, unwrapping one VLAN
/// tag. Anything that is not IPv4 is classified instead.
pub fn ipv4_offset(link: LinkType, data: &[u8]) -> Result<usize, FrameKind> {
    match link {
        LinkType::Ethernet => {
            if data.len() < 14 {
                return Err(FrameKind::Truncated);
            }
            let mut ethertype = u16::from_be_bytes([data[12], data[13]]);
            let mut off = 14;
            if ethertype == ETHERTYPE_VLAN {
                if data.len() < 18 {
                    return Err(FrameKind::Truncated);
                }
                ethertype = u16::from_be_bytes([data[16], data[17]]);
                off = 18;
            }
            match ethertype {
                ETHERTYPE_IPV4 => Ok(off),
                ETHERTYPE_IPV6 => Err(FrameKind::Ipv6),
                _ => Err(FrameKind::NonIp),
            }
        }
        LinkType::RawIp => {
            let Some(&first) = data.first() else {
                return Err(FrameKind::Truncated);
            };
            match first >> 4 {
                4 => Ok(0),
                6 => Err(FrameKind::Ipv6),
                _ => Err(FrameKind::NonIp),
            }
        }
    }
}

/// Finds the IPv4 header and validates its length fields.
pub fn locate_ipv4(link: LinkType, data: &[u8]) -> Result<Ipv4Location, FrameKind> {
    let ip_offset = ipv4_offset(link, data)?;
    let ip = &data[ip_offset..];
    if ip.len() < 20 {
        return Err(FrameKind::Truncated);
    }
    if ip[0] >> 4 != 4 {
        return Err(FrameKind::Malformed("IP version field is not 4"));
    }
    let header_length = usize::from(ip[0] & 0x0f) * 4;
    if header_length < 20 {
        return Err(FrameKind::Malformed("IPv4 header length below 20"));
    }
    if ip.len() < header_length {
        return Err(FrameKind::Truncated);
    }
    let total_length = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    if total_length < header_length {
        return Err(FrameKind::Malformed("IPv4 total length below header length"));
    }
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    Ok(Ipv4Location {
        ip_offset,
        header_length,
        total_length,
        protocol: ip[9],
        transport_offset: (frag_offset == 0).then_some(ip_offset + header_length),
    })
}

pub fn decode_frame(link: LinkType, data: &[u8], ts: Timestamp) -> FrameKind {
    let loc = match locate_ipv4(link, data) {
        Ok(loc) => loc,
        Err(kind) => return kind,
    };
    let ip = &data[loc.ip_offset..];
    let src = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    // Ethernet padding can make the capture longer than the datagram.
    let captured = ip.len().min(loc.total_length);
    let truncated = captured < loc.total_length;
    let ip_payload = loc.total_length - loc.header_length;

    let (transport, transport_header) = match loc.transport_offset {
        None => (Ok(Transport::None), 0),
        Some(off) => {
            let seg = &data[off..loc.ip_offset + captured];
            match loc.protocol {
                PROTO_TCP => match decode_tcp(seg) {
                    Ok(h) => {
                        let hl = usize::from(h.header_length);
                        (Ok(Transport::Tcp(h)), hl)
                    }
                    Err(kind) => (Err(kind), 0),
                },
                PROTO_UDP => {
                    if seg.len() < 8 {
                        return if truncated {
                            FrameKind::Truncated
                        } else {
                            FrameKind::Malformed("IPv4 total length shorter than transport header")
                        };
                    }
                    let src_port = u16::from_be_bytes([seg[0], seg[1]]);
                    let dst_port = u16::from_be_bytes([seg[2], seg[3]]);
                    (Ok(Transport::Udp { src_port, dst_port }), 8)
                }
                _ => (Ok(Transport::None), 0),
            }
        }
    };
    let (transport, transport_header) = match (transport, transport_header) {
        // the whole datagram was captured, so a short header is the datagram's fault
        (Err(FrameKind::Truncated), _) if !truncated => {
            return FrameKind::Malformed("IPv4 total length shorter than transport header")
        }
        (Err(kind), _) => return kind,
        (Ok(t), hl) => (t, hl),
    };
    if ip_payload < transport_header {
        return FrameKind::Malformed("IPv4 total length shorter than transport header");
    }
    FrameKind::Ipv4(PacketRecord {
        ts,
        src,
        dst,
        protocol: loc.protocol,
        ip_total_length: loc.total_length as u16,
        ip_header_length: loc.header_length as u8,
        later_fragment: loc.transport_offset.is_none(),
        transport,
        payload_length: (ip_payload - transport_header) as u32,
        truncated,
    })
}

fn decode_tcp(seg: &[u8]) -> Result<TcpHeader, FrameKind> {
    if seg.len() < 20 {
        return Err(FrameKind::Truncated);
    }
    let header_length = usize::from(seg[12] >> 4) * 4;
    if header_length < 20 {
        return Err(FrameKind::Malformed("TCP data offset below 5"));
    }
    if seg.len() < header_length {
        return Err(FrameKind::Truncated);
    }
    Ok(TcpHeader {
        src_port: u16::from_be_bytes([seg[0], seg[1]]),
        dst_port: u16::from_be_bytes([seg[2], seg[3]]),
        seq: u32::from_be_bytes([seg[4], seg[5], seg[6], seg[7]]),
        ack: u32::from_be_bytes([seg[8], seg[9], seg[10], seg[11]]),
        flags: TcpFlags(seg[13]),
        window: u16::from_be_bytes([seg[14], seg[15]]),
        header_length: header_length as u8,
        options: decode_tcp_options(&seg[20..header_length]),
    })
}
