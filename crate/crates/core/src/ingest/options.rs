use std::fmt;

const KIND_EOL: u8 = 0;
const KIND_NOP: u8 = 1;
const KIND_MSS: u8 = 2;
const KIND_WSCALE: u8 = 3;
const KIND_SACK_PERMITTED: u8 = 4;
const KIND_SACK: u8 = 5;
const KIND_TIMESTAMP: u8 = 8;

/// Largest shift RFC 7323 allows; larger values are clamped.
pub const MAX_WINDOW_SHIFT: u8 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MalformedOption {
    pub kind: u8,
    pub offset: usize,
}

impl fmt::Display for MalformedOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "malformed TCP option kind {} at offset {}", self.kind, self.offset)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TcpOptions {
    pub mss: Option<u16>,
    pub window_scale: Option<u8>,
    pub sack_permitted: bool,
    pub sack_blocks: u8,
    pub timestamps: Option<(u32, u32)>,
    /// Kinds we do not interpret, in order of appearance.
    pub unknown: Vec<u8>,
    /// Set when parsing stopped on an inconsistent option; everything decoded
    /// before it is kept.
    pub malformed: Option<MalformedOption>,
}

impl TcpOptions {
    pub fn is_partial(&self) -> bool {
        self.malformed.is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.mss.is_none()
            && self.window_scale.is_none()
            && !self.sack_permitted
            && self.sack_blocks == 0
            && self.timestamps.is_none()
            && self.unknown.is_empty()
    }
}

/// Parses the option region of a TCP header (bytes 20..data_offset*4).
pub fn decode_tcp_options(raw: &[u8]) -> TcpOptions {
    let mut opts = TcpOptions::default();
    let mut i = 0;
    while i < raw.len() {
        let kind = raw[i];
        match kind {
            KIND_EOL => break,
            KIND_NOP => {
                i += 1;
                continue;
            }
            _ => {}
        }
        let bad = MalformedOption { kind, offset: i };
        let Some(&len) = raw.get(i + 1) else {
            opts.malformed = Some(bad);
            break;
        };
        let len = len as usize;
        if len < 2 || i + len > raw.len() {
            opts.malformed = Some(bad);
            break;
        }
        let body = &raw[i + 2..i + len];
        let ok = match kind {
            KIND_MSS if len == 4 => {
                opts.mss = Some(u16::from_be_bytes([body[0], body[1]]));
                true
            }
            KIND_WSCALE if len == 3 => {
                opts.window_scale = Some(body[0].min(MAX_WINDOW_SHIFT));
                true
            }
            KIND_SACK_PERMITTED if len == 2 => {
                opts.sack_permitted = true;
                true
            }
            KIND_SACK if (len - 2).is_multiple_of(8) => {
                opts.sack_blocks = ((len - 2) / 8) as u8;
                true
            }
            KIND_TIMESTAMP if len == 10 => {
                let val = u32::from_be_bytes([body[0], body[1], body[2], body[3]]);
                let ecr = u32::from_be_bytes([body[4], body[5], body[6], body[7]]);
                opts.timestamps = Some((val, ecr));
                true
            }
            KIND_MSS | KIND_WSCALE | KIND_SACK_PERMITTED | KIND_SACK | KIND_TIMESTAMP => false,
            other => {
                opts.unknown.push(other);
                true
            }
        };
        if !ok {
            opts.malformed = Some(bad);
            break;
        }
        i += len;
    }
    opts
}
