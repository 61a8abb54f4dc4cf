use std::collections::BTreeMap;

const WRAP: u64 = 1 << 32;
const HALF: u64 = 1 << 31;

/// Maps 32-bit sequence numbers onto a monotone 64-bit axis: each value is
/// placed within 2^31 of the highest value seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqSpace {
    anchor: u64,
}

impl SeqSpace {
    /// Starts the axis one full wrap above zero so slightly older values stay
    /// positive.
    pub fn new(first: u32) -> Self {
        SeqSpace { anchor: WRAP + u64::from(first) }
    }

    pub fn unwrap(&mut self, x: u32) -> u64 {
        let v = self.peek(x);
        if v > self.anchor {
            self.anchor = v;
        }
        v
    }

    /// Same as [`unwrap`](Self::unwrap) without moving the anchor.
    pub fn peek(&self, x: u32) -> u64 {
        let base = self.anchor & !(WRAP - 1);
        let cand = base + u64::from(x);
        if cand + HALF < self.anchor {
            cand + WRAP
        } else if cand > self.anchor + HALF && cand >= WRAP {
            cand - WRAP
        } else {
            cand
        }
    }
}

/// `a < b` in modular sequence order.
pub fn seq_lt(a: u32, b: u32) -> bool {
    (b.wrapping_sub(a) as i32) > 0
}

/// Disjoint, merged half-open ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    ranges: BTreeMap<u64, u64>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intersects(&self, start: u64, end: u64) -> bool {
        if start >= end {
            return false;
        }
        match self.ranges.range(..end).next_back() {
            Some((_, &e)) => e > start,
            None => false,
        }
    }

    /// Whether `[start, end)` is entirely covered.
    pub fn covers(&self, start: u64, end: u64) -> bool {
        if start >= end {
            return true;
        }
        match self.ranges.range(..=start).next_back() {
            Some((_, &e)) => e >= end,
            None => false,
        }
    }

    pub fn insert(&mut self, mut start: u64, mut end: u64) {
        if start >= end {
            return;
        }
        // absorb every range touching [start, end]
        let touching: Vec<(u64, u64)> = self
            .ranges
            .range(..=end)
            .rev()
            .take_while(|(_, &e)| e >= start)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in touching {
            self.ranges.remove(&s);
            start = start.min(s);
            end = end.max(e);
        }
        self.ranges.insert(start, end);
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.ranges.iter().map(|(&s, &e)| (s, e))
    }
}
