//! Traffic classification: scope (LAN/MAN/WAN), WAN destination continent,
//! transport protocol, and TCP service by server port.
//!
//! All databases are immutable once loaded. Scope and continent must be
//! computed on raw addresses, before anything is anonymized.

mod prefix;

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use prefix::{Cidr, CidrParseError, PrefixSet, PrefixTrie};

use crate::flow::FlowRecord;
use crate::ingest::{PROTO_ICMP, PROTO_IGMP, PROTO_TCP, PROTO_UDP};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:{line}: duplicate prefix {cidr}")]
    DuplicatePrefix { path: String, line: usize, cidr: Cidr },
    #[error("LAN prefix {lan} overlaps MAN prefix {man}")]
    Overlap { lan: Cidr, man: Cidr },
    #[error("no LAN prefix configured")]
    EmptyLan,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn read_text(path: &Path) -> Result<String, ClassifyError> {
    std::fs::read_to_string(path).map_err(|source| ClassifyError::Io { path: path.to_path_buf(), source })
}

/// Lines with `#` comments and surrounding blanks stripped, numbered from 1.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

// ---------------------------------------------------------------- scope

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Lan,
    Man,
    Wan,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Lan, Scope::Man, Scope::Wan];

    pub fn label(self) -> &'static str {
        match self {
            Scope::Lan => "LAN",
            Scope::Man => "MAN",
            Scope::Wan => "WAN",
        }
    }

    pub fn parse(s: &str) -> Option<Scope> {
        Scope::ALL.into_iter().find(|x| x.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Monitored intranet (`lan`) and island networks reachable through the
/// exchange point (`man`).
#[derive(Debug, Clone, Default)]
pub struct PrefixConfig {
    lan: PrefixSet,
    man: PrefixSet,
}

impl PrefixConfig {
    pub fn new(lan: Vec<Cidr>, man: Vec<Cidr>) -> Result<Self, ClassifyError> {
        let mut cfg = PrefixConfig::default();
        for (i, c) in lan.into_iter().enumerate() {
            if !cfg.lan.insert(c) {
                return Err(ClassifyError::DuplicatePrefix { path: "--lan".into(), line: i + 1, cidr: c });
            }
        }
        for (i, c) in man.into_iter().enumerate() {
            if !cfg.man.insert(c) {
                return Err(ClassifyError::DuplicatePrefix { path: "--man".into(), line: i + 1, cidr: c });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ClassifyError> {
        if self.lan.is_empty() {
            return Err(ClassifyError::EmptyLan);
        }
        for l in self.lan.blocks() {
            if let Some(m) = self.man.blocks().iter().find(|m| m.overlaps(l)) {
                return Err(ClassifyError::Overlap { lan: *l, man: *m });
            }
        }
        Ok(())
    }

    /// Parses `lan <cidr>` / `man <cidr>` lines.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ClassifyError> {
        let mut cfg = PrefixConfig::default();
        for (line, l) in content_lines(text) {
            let err = |message: String| ClassifyError::Parse { path: origin.into(), line, message };
            let mut parts = l.split_whitespace();
            let (Some(kind), Some(block), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(format!("expected `lan <cidr>` or `man <cidr>`, got {l:?}")));
            };
            let cidr: Cidr = block.parse().map_err(|e: CidrParseError| err(e.to_string()))?;
            let set = match kind.to_ascii_lowercase().as_str() {
                "lan" => &mut cfg.lan,
                "man" => &mut cfg.man,
                other => return Err(err(format!("unknown prefix class {other:?}"))),
            };
            if !set.insert(cidr) {
                return Err(ClassifyError::DuplicatePrefix { path: origin.into(), line, cidr });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lan(&self) -> &PrefixSet {
        &self.lan
    }

    pub fn man(&self) -> &PrefixSet {
        &self.man
    }

    pub fn is_lan(&self, a: Ipv4Addr) -> bool {
        self.lan.contains(a)
    }

    /// Address used for the continent lookup of a packet: the non-LAN
    /// endpoint, or the destination when neither end is local.
    pub fn remote_endpoint(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Ipv4Addr {
        if self.is_lan(dst) && !self.is_lan(src) {
            src
        } else {
            dst
        }
    }

    pub fn classify_scope(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Scope {
        let (s, d) = (self.is_lan(src), self.is_lan(dst));
        if s && d {
            return Scope::Lan;
        }
        let remote = if s { dst } else if d { src } else { dst };
        if self.man.contains(remote) {
            Scope::Man
        } else {
            Scope::Wan
        }
    }

    /// Neither endpoint is in a LAN prefix.
    pub fn is_foreign(&self, src: Ipv4Addr, dst: Ipv4Addr) -> bool {
        !self.is_lan(src) && !self.is_lan(dst)
    }
}

pub fn load_prefix_config(path: impl AsRef<Path>) -> Result<PrefixConfig, ClassifyError> {
    let path = path.as_ref();
    PrefixConfig::parse(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- geography

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Continent {
    Africa,
    Asia,
    Europe,
    NorthAmerica,
    SouthAmerica,
    Oceania,
    Unknown,
}

impl Continent {
    pub const ALL: [Continent; 7] = [
        Continent::Africa,
        Continent::Asia,
        Continent::Europe,
        Continent::NorthAmerica,
        Continent::SouthAmerica,
        Continent::Oceania,
        Continent::Unknown,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Continent::Africa => "Africa",
            Continent::Asia => "Asia",
            Continent::Europe => "Europe",
            Continent::NorthAmerica => "North America",
            Continent::SouthAmerica => "South America",
            Continent::Oceania => "Oceania",
            Continent::Unknown => "Unknown",
        }
    }

    /// Accepts the labels above (any case, `_`/`-` for spaces) and the
    /// two-letter continent codes.
    pub fn parse(s: &str) -> Option<Continent> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect::<String>()
            .to_ascii_lowercase();
        Some(match norm.as_str() {
            "africa" | "af" => Continent::Africa,
            "asia" | "as" => Continent::Asia,
            "europe" | "eu" => Continent::Europe,
            "northamerica" | "na" => Continent::NorthAmerica,
            "southamerica" | "sa" => Continent::SouthAmerica,
            "oceania" | "oc" => Continent::Oceania,
            "unknown" => Continent::Unknown,
            _ => return None,
        })
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Default)]
pub struct GeoDb {
    entries: Vec<(Cidr, Continent)>,
    index: PrefixTrie<Continent>,
}

impl GeoDb {
    pub fn new(entries: impl IntoIterator<Item = (Cidr, Continent)>) -> Self {
        let mut db = GeoDb::default();
        for (c, k) in entries {
            db.insert(c, k);
        }
        db
    }

    /// Later entries for the same block replace earlier ones.
    pub fn insert(&mut self, cidr: Cidr, continent: Continent) -> Option<Continent> {
        let prev = self.index.insert(cidr, continent);
        match self.entries.iter_mut().find(|(c, _)| *c == cidr) {
            Some(e) => e.1 = continent,
            None => self.entries.push((cidr, continent)),
        }
        prev
    }

    pub fn lookup(&self, addr: Ipv4Addr) -> Continent {
        self.index.get(addr).copied().unwrap_or(Continent::Unknown)
    }

    pub fn entries(&self) -> &[(Cidr, Continent)] {
        &self.entries
    }

    /// CSV `cidr,continent`; an optional header line starting with `cidr` is
    /// skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ClassifyError> {
        let mut db = GeoDb::default();
        for (line, l) in content_lines(text) {
            let err = |message: String| ClassifyError::Parse { path: origin.into(), line, message };
            let Some((block, label)) = l.split_once(',') else {
                return Err(err(format!("expected `cidr,continent`, got {l:?}")));
            };
            if block.trim().eq_ignore_ascii_case("cidr") {
                continue;
            }
            let cidr: Cidr = block.parse().map_err(|e: CidrParseError| err(e.to_string()))?;
            let label = label.trim().trim_matches('"');
            let continent = Continent::parse(label).ok_or_else(|| err(format!("unknown continent {label:?}")))?;
            if let Some(prev) = db.insert(cidr, continent) {
                log::warn!("{origin}:{line}: {cidr} listed again ({prev} -> {continent}); keeping the later entry");
            }
        }
        Ok(db)
    }
}

pub fn lookup_continent(addr: Ipv4Addr, db: &GeoDb) -> Continent {
    db.lookup(addr)
}

pub fn load_geo_db(path: impl AsRef<Path>) -> Result<GeoDb, ClassifyError> {
    let path = path.as_ref();
    GeoDb::parse(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- transport

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransportClass {
    Icmp,
    Igmp,
    Tcp,
    Udp,
    Other(u8),
}

impl TransportClass {
    pub fn label(self) -> String {
        match self {
            TransportClass::Icmp => "ICMP".into(),
            TransportClass::Igmp => "IGMP".into(),
            TransportClass::Tcp => "TCP".into(),
            TransportClass::Udp => "UDP".into(),
            TransportClass::Other(p) => format!("Other({p})"),
        }
    }
}

pub fn classify_transport(protocol: u8) -> TransportClass {
    match protocol {
        PROTO_ICMP => TransportClass::Icmp,
        PROTO_IGMP => TransportClass::Igmp,
        PROTO_TCP => TransportClass::Tcp,
        PROTO_UDP => TransportClass::Udp,
        p => TransportClass::Other(p),
    }
}

// ---------------------------------------------------------------- services

pub const MAIL_PORTS: [u16; 7] = [25, 110, 143, 465, 587, 993, 995];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PortProto {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServiceCategory {
    Ssh,
    Dns,
    Mail,
    Http,
    Https,
    /// Known to the services file but outside the fixed categories.
    Named(String),
    NonIdentified,
}

impl ServiceCategory {
    pub fn label(&self) -> &str {
        match self {
            ServiceCategory::Ssh => "SSH",
            ServiceCategory::Dns => "DNS",
            ServiceCategory::Mail => "Mail",
            ServiceCategory::Http => "HTTP",
            ServiceCategory::Https => "HTTPS",
            ServiceCategory::Named(n) => n,
            ServiceCategory::NonIdentified => "NonIdentified",
        }
    }

    /// Inverse of [`label`](Self::label); unknown labels become `Named`.
    pub fn from_label(s: &str) -> ServiceCategory {
        match s {
            "SSH" => ServiceCategory::Ssh,
            "DNS" => ServiceCategory::Dns,
            "Mail" => ServiceCategory::Mail,
            "HTTP" => ServiceCategory::Http,
            "HTTPS" => ServiceCategory::Https,
            "NonIdentified" => ServiceCategory::NonIdentified,
            other => ServiceCategory::Named(other.to_string()),
        }
    }
}

impl fmt::Display for ServiceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn fixed_category(port: u16) -> Option<ServiceCategory> {
    match port {
        22 => Some(ServiceCategory::Ssh),
        53 => Some(ServiceCategory::Dns),
        80 => Some(ServiceCategory::Http),
        443 => Some(ServiceCategory::Https),
        p if MAIL_PORTS.contains(&p) => Some(ServiceCategory::Mail),
        _ => None,
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceDb {
    port_map: HashMap<(u16, PortProto), String>,
}

impl ServiceDb {
    pub fn insert(&mut self, port: u16, proto: PortProto, name: &str) {
        self.port_map.entry((port, proto)).or_insert_with(|| name.to_string());
    }

    pub fn name(&self, port: u16, proto: PortProto) -> Option<&str> {
        self.port_map.get(&(port, proto)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.port_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.port_map.is_empty()
    }

    /// Port has a category without falling back to `NonIdentified`.
    pub fn knows_tcp(&self, port: u16) -> bool {
        fixed_category(port).is_some() || self.port_map.contains_key(&(port, PortProto::Tcp))
    }

    pub fn categorize_tcp_port(&self, port: u16) -> ServiceCategory {
        if let Some(c) = fixed_category(port) {
            return c;
        }
        match self.name(port, PortProto::Tcp) {
            Some(name) => ServiceCategory::Named(name.to_string()),
            None => ServiceCategory::NonIdentified,
        }
    }

    /// Conventional services-file syntax: `name port/proto [aliases] [# ...]`.
    /// Protocols other than tcp/udp are ignored; the first name for a port wins.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ClassifyError> {
        let mut db = ServiceDb::default();
        for (line, l) in content_lines(text) {
            let err = |message: String| ClassifyError::Parse { path: origin.into(), line, message };
            let mut parts = l.split_whitespace();
            let (Some(name), Some(spec)) = (parts.next(), parts.next()) else {
                return Err(err(format!("expected `name port/proto`, got {l:?}")));
            };
            let Some((port, proto)) = spec.split_once('/') else {
                return Err(err(format!("expected port/proto, got {spec:?}")));
            };
            let port: u16 = port.parse().map_err(|_| err(format!("bad port {port:?}")))?;
            let proto = match proto.to_ascii_lowercase().as_str() {
                "tcp" => PortProto::Tcp,
                "udp" => PortProto::Udp,
                _ => continue,
            };
            db.insert(port, proto, name);
        }
        Ok(db)
    }
}

pub fn load_services_db(path: impl AsRef<Path>) -> Result<ServiceDb, ClassifyError> {
    let path = path.as_ref();
    ServiceDb::parse(&read_text(path)?, &path.display().to_string())
}

/// Server side of a TCP flow: the responder when the handshake was seen,
/// otherwise the smaller port known to the services database, otherwise the
/// smaller port.
pub fn server_port(flow: &FlowRecord, db: &ServiceDb) -> u16 {
    if let Some(p) = flow.handshake_server_port() {
        return p;
    }
    let (a, b) = (flow.key.port_lo, flow.key.port_hi);
    let (lo, hi) = (a.min(b), a.max(b));
    if db.knows_tcp(lo) {
        lo
    } else if db.knows_tcp(hi) {
        hi
    } else {
        lo
    }
}

pub fn classify_service(flow: &FlowRecord, db: &ServiceDb) -> ServiceCategory {
    db.categorize_tcp_port(server_port(flow, db))
}
