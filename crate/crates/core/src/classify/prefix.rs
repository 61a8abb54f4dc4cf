use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

/// IPv4 CIDR block. Host bits are cleared on construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cidr {
    addr: u32,
    len: u8,
}

impl Cidr {
    pub fn new(addr: Ipv4Addr, len: u8) -> Option<Cidr> {
        (len <= 32).then(|| Cidr { addr: u32::from(addr) & mask(len), len })
    }

    pub fn addr(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.addr)
    }

    pub fn bits(&self) -> u32 {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, a: Ipv4Addr) -> bool {
        u32::from(a) & mask(self.len) == self.addr
    }

    /// One block contains the other.
    pub fn overlaps(&self, other: &Cidr) -> bool {
        let m = mask(self.len.min(other.len));
        self.addr & m == other.addr & m
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr(), self.len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CidrParseError(pub String);

impl fmt::Display for CidrParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid CIDR block {:?}", self.0)
    }
}

impl std::error::Error for CidrParseError {}

impl FromStr for Cidr {
    type Err = CidrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || CidrParseError(s.to_string());
        let (addr, len) = match s.trim().split_once('/') {
            Some((a, l)) => (a, l.parse::<u8>().map_err(|_| err())?),
            None => (s.trim(), 32),
        };
        let addr: Ipv4Addr = addr.parse().map_err(|_| err())?;
        Cidr::new(addr, len).ok_or_else(err)
    }
}

/// Binary trie answering longest-prefix-match queries.
#[derive(Debug, Clone)]
pub struct PrefixTrie<V> {
    nodes: Vec<Node<V>>,
    len: usize,
}

#[derive(Debug, Clone)]
struct Node<V> {
    children: [Option<u32>; 2],
    value: Option<V>,
}

impl<V> Node<V> {
    fn empty() -> Self {
        Node { children: [None, None], value: None }
    }
}

impl<V> Default for PrefixTrie<V> {
    fn default() -> Self {
        PrefixTrie { nodes: vec![Node::empty()], len: 0 }
    }
}

impl<V> PrefixTrie<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces; returns the previous value for the same block.
    pub fn insert(&mut self, cidr: Cidr, value: V) -> Option<V> {
        let mut idx = 0usize;
        for i in 0..cidr.len {
            let bit = ((cidr.addr >> (31 - i)) & 1) as usize;
            idx = match self.nodes[idx].children[bit] {
                Some(next) => next as usize,
                None => {
                    self.nodes.push(Node::empty());
                    let next = self.nodes.len() - 1;
                    self.nodes[idx].children[bit] = Some(next as u32);
                    next
                }
            };
        }
        let prev = self.nodes[idx].value.replace(value);
        if prev.is_none() {
            self.len += 1;
        }
        prev
    }

    pub fn longest_match(&self, addr: Ipv4Addr) -> Option<(u8, &V)> {
        let a = u32::from(addr);
        let mut idx = 0usize;
        let mut best = self.nodes[0].value.as_ref().map(|v| (0u8, v));
        for i in 0..32u8 {
            let bit = ((a >> (31 - i)) & 1) as usize;
            match self.nodes[idx].children[bit] {
                Some(next) => idx = next as usize,
                None => break,
            }
            if let Some(v) = &self.nodes[idx].value {
                best = Some((i + 1, v));
            }
        }
        best
    }

    pub fn get(&self, addr: Ipv4Addr) -> Option<&V> {
        self.longest_match(addr).map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A set of CIDR blocks with membership tests.
#[derive(Debug, Clone, Default)]
pub struct PrefixSet {
    blocks: Vec<Cidr>,
    trie: PrefixTrie<()>,
}

impl PrefixSet {
    pub fn new(blocks: impl IntoIterator<Item = Cidr>) -> Self {
        let mut set = PrefixSet::default();
        for b in blocks {
            set.insert(b);
        }
        set
    }

    /// Returns false if the block was already present.
    pub fn insert(&mut self, block: Cidr) -> bool {
        if self.trie.insert(block, ()).is_some() {
            return false;
        }
        self.blocks.push(block);
        true
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        self.trie.get(addr).is_some()
    }

    pub fn blocks(&self) -> &[Cidr] {
        &self.blocks
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}
