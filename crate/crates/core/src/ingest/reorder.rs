use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{PacketRecord, Timestamp};

pub const REORDER_CAPACITY: usize = 128;

struct Pending {
    ts: Timestamp,
    arrival: u64,
    rec: PacketRecord,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.ts, self.arrival).cmp(&(other.ts, other.arrival))
    }
}

/// Holds up to `capacity` records and releases the earliest one once full.
/// Ties keep file order. A record older than one already released is passed
/// through as-is and counted as a monotonicity violation.
pub struct ReorderBuffer {
    heap: BinaryHeap<Reverse<Pending>>,
    capacity: usize,
    arrivals: u64,
    last_out: Option<Timestamp>,
    violations: u64,
}

impl Default for ReorderBuffer {
    fn default() -> Self {
        ReorderBuffer::with_capacity(REORDER_CAPACITY)
    }
}

impl ReorderBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        ReorderBuffer {
            heap: BinaryHeap::with_capacity(capacity + 1),
            capacity: capacity.max(1),
            arrivals: 0,
            last_out: None,
            violations: 0,
        }
    }

    pub fn push(&mut self, rec: PacketRecord) -> Option<PacketRecord> {
        let p = Pending { ts: rec.ts, arrival: self.arrivals, rec };
        self.arrivals += 1;
        self.heap.push(Reverse(p));
        if self.heap.len() > self.capacity {
            self.pop()
        } else {
            None
        }
    }

    pub fn pop(&mut self) -> Option<PacketRecord> {
        let Reverse(p) = self.heap.pop()?;
        match self.last_out {
            Some(last) if p.ts < last => self.violations += 1,
            _ => self.last_out = Some(p.ts),
        }
        Some(p.rec)
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Transport;
    use std::net::Ipv4Addr;

    fn rec(us: u64, tag: u16) -> PacketRecord {
        PacketRecord {
            ts: Timestamp(us),
            src: Ipv4Addr::new(10, 0, 0, 1),
            dst: Ipv4Addr::new(10, 0, 0, 2),
            protocol: 17,
            ip_total_length: 28 + tag,
            ip_header_length: 20,
            later_fragment: false,
            transport: Transport::Udp { src_port: tag, dst_port: 53 },
            payload_length: u32::from(tag),
            truncated: false,
        }
    }

    fn drain(buf: &mut ReorderBuffer, input: &[(u64, u16)]) -> Vec<(u64, u16)> {
        let mut out = Vec::new();
        for &(ts, tag) in input {
            if let Some(r) = buf.push(rec(ts, tag)) {
                out.push((r.ts.0, r.ports().unwrap().0));
            }
        }
        while let Some(r) = buf.pop() {
            out.push((r.ts.0, r.ports().unwrap().0));
        }
        out
    }

    #[test]
    fn sorts_within_capacity_and_keeps_ties_stable() {
        let mut b = ReorderBuffer::with_capacity(4);
        let out = drain(&mut b, &[(5, 1), (3, 2), (3, 3), (4, 4), (6, 5)]);
        assert_eq!(out, vec![(3, 2), (3, 3), (4, 4), (5, 1), (6, 5)]);
        assert_eq!(b.violations(), 0);
    }

    #[test]
    fn late_record_beyond_capacity_counts_violation() {
        let mut b = ReorderBuffer::with_capacity(2);
        let out = drain(&mut b, &[(10, 1), (11, 2), (12, 3), (13, 4), (1, 5)]);
        assert_eq!(out.len(), 5);
        assert_eq!(b.violations(), 1);
        assert!(out.contains(&(1, 5)));
    }
}
