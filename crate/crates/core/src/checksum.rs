//! Internet checksum helpers (RFC 1071, incremental update per RFC 1624).

/// One's-complement sum of 16-bit big-endian words, not yet folded.
pub fn ones_sum(data: &[u8], mut acc: u32) -> u32 {
    let mut chunks = data.chunks_exact(2);
    for c in &mut chunks {
        acc = acc.wrapping_add(u32::from(u16::from_be_bytes([c[0], c[1]])));
    }
    if let [last] = chunks.remainder() {
        acc = acc.wrapping_add(u32::from(*last) << 8);
    }
    acc
}

pub fn fold(mut acc: u32) -> u16 {
    while acc >> 16 != 0 {
        acc = (acc & 0xffff) + (acc >> 16);
    }
    acc as u16
}

pub fn internet_checksum(data: &[u8]) -> u16 {
    !fold(ones_sum(data, 0))
}

/// TCP/UDP checksum over the IPv4 pseudo-header and the full segment.
pub fn transport_checksum(src: [u8; 4], dst: [u8; 4], protocol: u8, segment: &[u8]) -> u16 {
    let mut acc = ones_sum(&src, 0);
    acc = ones_sum(&dst, acc);
    acc = acc.wrapping_add(u32::from(protocol));
    acc = acc.wrapping_add(segment.len() as u32);
    acc = ones_sum(segment, acc);
    !fold(acc)
}

/// Updates `check` after 16-bit words `old` were replaced by `new`
/// (HC' = ~(~HC + ~m + m')).
pub fn incremental_update(check: u16, old: &[u8], new: &[u8]) -> u16 {
    debug_assert_eq!(old.len(), new.len());
    let mut acc = u32::from(!check);
    for (o, n) in old.chunks_exact(2).zip(new.chunks_exact(2)) {
        acc = acc.wrapping_add(u32::from(!u16::from_be_bytes([o[0], o[1]])));
        acc = acc.wrapping_add(u32::from(u16::from_be_bytes([n[0], n[1]])));
    }
    !fold(acc)
}
