//! Keyed prefix-preserving IPv4 anonymization and whole-trace rewriting.
//!
//! Output bit `i` (counting from the most significant bit) is input bit `i`
//! XOR a pseudorandom bit computed from input bits `0..i`. Two addresses that
//! share a `k`-bit prefix therefore see the same first `k` flip bits and keep
//! exactly that prefix in common, and the map is a bijection.
//!
//! The pseudorandom function is AES-128 over a 128-bit block made of the
//! address prefix followed by a secret pad, keeping the top output bit. This
//! is the Crypto-PAn construction; [`AesPrf::from_cryptopan_key`] accepts the
//! classic 256-bit key layout, [`AnonKey`] derives the pad from a single
//! 128-bit key.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use thiserror::Error;

use crate::checksum::{incremental_update, internet_checksum};
use crate::ingest::{
    decode_frame, ipv4_offset, IngestError, IngestStats, PcapReader, PcapWriter, PROTO_TCP,
    PROTO_UDP,
};

/// Environment variable consulted for the key when no config field is set.
pub const ANON_KEY_ENV: &str = "TCPMETRO_ANON_KEY";

#[derive(Debug, Error)]
pub enum AnonError {
    #[error("anonymization key must be 128 bits (32 hex characters), got {0} bytes")]
    BadKeyLength(usize),
    #[error("anonymization key is not valid hex")]
    BadKeyHex,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// 128-bit anonymization secret. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct AnonKey([u8; 16]);

impl AnonKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AnonError> {
        let arr: [u8; 16] = bytes.try_into().map_err(|_| AnonError::BadKeyLength(bytes.len()))?;
        Ok(AnonKey(arr))
    }

    pub fn from_hex(s: &str) -> Result<Self, AnonError> {
        let s = s.trim();
        if s.len().is_multiple_of(2) && s.len() != 32 {
            return Err(AnonError::BadKeyLength(s.len() / 2));
        }
        let bytes = hex::decode(s).map_err(|_| AnonError::BadKeyHex)?;
        Self::from_bytes(&bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for AnonKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AnonKey(<redacted>)")
    }
}

/// Pseudorandom bit over an address prefix.
pub trait Prf {
    /// `prefix` holds the top `len` bits of the input address (`len < 32`),
    /// the remaining bits zero.
    fn bit(&self, prefix: u32, len: u32) -> bool;
}

#[derive(Clone)]
pub struct AesPrf {
    cipher: Aes128,
    pad: [u8; 16],
}

impl AesPrf {
    pub fn new(key: &AnonKey) -> Self {
        let cipher = Aes128::new(GenericArray::from_slice(&key.0));
        let mut pad = GenericArray::clone_from_slice(&[0u8; 16]);
        cipher.encrypt_block(&mut pad);
        AesPrf { cipher, pad: pad.into() }
    }

    /// Classic Crypto-PAn keying: first half is the AES key, the pad is the
    /// second half encrypted under it.
    pub fn from_cryptopan_key(key: &[u8; 32]) -> Self {
        let cipher = Aes128::new(GenericArray::from_slice(&key[..16]));
        let mut pad = GenericArray::clone_from_slice(&key[16..]);
        cipher.encrypt_block(&mut pad);
        AesPrf { cipher, pad: pad.into() }
    }
}

impl Prf for AesPrf {
    fn bit(&self, prefix: u32, len: u32) -> bool {
        let pad_head = u32::from_be_bytes([self.pad[0], self.pad[1], self.pad[2], self.pad[3]]);
        let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
        let head = (prefix & mask) | (pad_head & !mask);
        let mut block = self.pad;
        block[..4].copy_from_slice(&head.to_be_bytes());
        let mut block = GenericArray::from(block);
        self.cipher.encrypt_block(&mut block);
        block[0] & 0x80 != 0
    }
}

/// Always-zero PRF: the induced map is the identity. Test hook.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPrf;

impl Prf for ZeroPrf {
    fn bit(&self, _prefix: u32, _len: u32) -> bool {
        false
    }
}

#[derive(Clone)]
pub struct Anonymizer<P = AesPrf> {
    prf: P,
}

impl Anonymizer<AesPrf> {
    pub fn new(key: &AnonKey) -> Self {
        Anonymizer { prf: AesPrf::new(key) }
    }
}

impl<P: Prf> Anonymizer<P> {
    pub fn with_prf(prf: P) -> Self {
        Anonymizer { prf }
    }

    pub fn anonymize_u32(&self, addr: u32) -> u32 {
        let mut flips = 0u32;
        for i in 0..32u32 {
            let prefix = if i == 0 { 0 } else { addr & (u32::MAX << (32 - i)) };
            if self.prf.bit(prefix, i) {
                flips |= 1 << (31 - i);
            }
        }
        addr ^ flips
    }

    pub fn anonymize(&self, addr: Ipv4Addr) -> Ipv4Addr {
        Ipv4Addr::from(self.anonymize_u32(u32::from(addr)))
    }

    /// Rewrites the IPv4 addresses of one captured frame in place and patches
    /// the IPv4, TCP and UDP checksums. Frames without a readable IPv4 address
    /// pair are left untouched. Returns whether the frame was rewritten.
    pub fn rewrite_frame(&self, link: crate::ingest::LinkType, frame: &mut [u8]) -> bool {
        let Ok(off) = ipv4_offset(link, frame) else {
            return false;
        };
        let ip = &mut frame[off..];
        if ip.len() < 20 || ip[0] >> 4 != 4 {
            return false;
        }
        let old: [u8; 8] = ip[12..20].try_into().expect("slice of 8");
        let src = self.anonymize_u32(u32::from_be_bytes(old[..4].try_into().unwrap()));
        let dst = self.anonymize_u32(u32::from_be_bytes(old[4..].try_into().unwrap()));
        let mut new = [0u8; 8];
        new[..4].copy_from_slice(&src.to_be_bytes());
        new[4..].copy_from_slice(&dst.to_be_bytes());
        ip[12..20].copy_from_slice(&new);

        let hl = usize::from(ip[0] & 0x0f) * 4;
        if hl >= 20 && ip.len() >= hl {
            ip[10] = 0;
            ip[11] = 0;
            let c = internet_checksum(&ip[..hl]);
            ip[10..12].copy_from_slice(&c.to_be_bytes());
        } else {
            let c = u16::from_be_bytes([ip[10], ip[11]]);
            let c = incremental_update(c, &old, &new);
            ip[10..12].copy_from_slice(&c.to_be_bytes());
        }

        let first_fragment = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff == 0;
        if !first_fragment || hl < 20 {
            return true;
        }
        let check_at = match ip[9] {
            PROTO_TCP => hl + 16,
            PROTO_UDP => hl + 6,
            _ => return true,
        };
        if ip.len() < check_at + 2 {
            return true;
        }
        let c = u16::from_be_bytes([ip[check_at], ip[check_at + 1]]);
        if c == 0 {
            // zero stays zero (UDP: checksum not in use)
            return true;
        }
        let mut c = incremental_update(c, &old, &new);
        if ip[9] == PROTO_UDP && c == 0 {
            c = 0xffff;
        }
        ip[check_at..check_at + 2].copy_from_slice(&c.to_be_bytes());
        true
    }
}

/// Rewrites `input` into `output`, anonymizing every IPv4 source and
/// destination address. Everything else is copied byte for byte.
pub fn anonymize_trace<P: Prf>(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    anon: &Anonymizer<P>,
) -> Result<IngestStats, AnonError> {
    let output = output.as_ref();
    let mut reader = PcapReader::new(BufReader::new(File::open(input).map_err(IngestError::Io)?))?;
    let link = reader.meta().link_type;
    let write_err = |source| AnonError::WriteFailure { path: output.to_path_buf(), source };
    let file = File::create(output).map_err(write_err)?;
    let mut writer = PcapWriter::new(BufWriter::new(file), reader.global_header()).map_err(write_err)?;
    let mut stats = IngestStats::default();
    while let Some(mut frame) = reader.next_frame()? {
        stats.record(&decode_frame(link, &frame.data, frame.ts));
        anon.rewrite_frame(link, &mut frame.data);
        writer.write_raw(&frame.header, &frame.data).map_err(write_err)?;
    }
    writer.finish().map_err(write_err)?;
    Ok(stats)
}

/// Length of the common leading bit prefix.
pub fn common_prefix_len(a: u32, b: u32) -> u32 {
    (a ^ b).leading_zeros()
}
