//! iptables-style INPUT chain: ordered rules, first match wins.
//!
//! `-I` inserts at the head of the chain. That matters for the stock policy
//! below: its first command is a blanket `-p tcp -j DROP`, and only because
//! every later command is inserted above it do the service accepts take
//! effect.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Proto {
    Tcp,
    Udp,
    Icmp,
    /// Tunnel encapsulation. No stock rule names it, so the default policy decides.
    Gre,
    Any,
}

impl Proto {
    pub fn as_str(self) -> &'static str {
        match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
            Proto::Icmp => "icmp",
            Proto::Gre => "gre",
            Proto::Any => "all",
        }
    }

    pub fn has_ports(self) -> bool {
        matches!(self, Proto::Tcp | Proto::Udp)
    }
}

impl FromStr for Proto {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Proto::Tcp),
            "udp" => Ok(Proto::Udp),
            "icmp" => Ok(Proto::Icmp),
            "gre" => Ok(Proto::Gre),
            "all" | "any" => Ok(Proto::Any),
            _ => Err(FilterError::Syntax(format!("unknown protocol {s:?}"))),
        }
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Accept,
    Drop,
    Reject,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "ACCEPT",
            Verdict::Drop => "DROP",
            Verdict::Reject => "REJECT",
        }
    }
}

impl FromStr for Verdict {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ACCEPT" => Ok(Verdict::Accept),
            "DROP" => Ok(Verdict::Drop),
            "REJECT" => Ok(Verdict::Reject),
            _ => Err(FilterError::Syntax(format!("unknown target {s:?}"))),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("{0}")]
    Syntax(String),
    #[error("--dport requires -p tcp or -p udp")]
    PortWithoutProtocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterRule {
    pub proto: Proto,
    pub dport: Option<u16>,
    pub src: Option<Ipv4Addr>,
    pub verdict: Verdict,
}

impl FilterRule {
    pub fn new(proto: Proto, dport: Option<u16>, src: Option<Ipv4Addr>, verdict: Verdict) -> Result<Self, FilterError> {
        if dport.is_some() && !proto.has_ports() {
            return Err(FilterError::PortWithoutProtocol);
        }
        Ok(FilterRule { proto, dport, src, verdict })
    }

    pub fn drop_source(src: Ipv4Addr) -> Self {
        FilterRule { proto: Proto::Any, dport: None, src: Some(src), verdict: Verdict::Drop }
    }

    pub fn matches(&self, packet: &Packet) -> bool {
        (self.proto == Proto::Any || self.proto == packet.proto)
            && self.dport.is_none_or(|p| packet.proto.has_ports() && p == packet.dport)
            && self.src.is_none_or(|s| s == packet.src)
    }

    /// Parse rule-spec flags: `-p tcp --dport 22 -s 10.0.0.9 -j ACCEPT`.
    /// The single-dash `-dport` spelling is accepted too.
    pub fn parse_spec(words: &[&str]) -> Result<Self, FilterError> {
        let mut proto = Proto::Any;
        let mut dport = None;
        let mut src = None;
        let mut verdict = None;
        let mut it = words.iter();
        while let Some(flag) = it.next() {
            let mut value = || it.next().copied().ok_or_else(|| FilterError::Syntax(format!("{flag} needs a value")));
            match *flag {
                "-p" | "--protocol" => proto = value()?.parse()?,
                "--dport" | "-dport" | "--destination-port" => {
                    let v = value()?;
                    dport = Some(v.parse::<u16>().map_err(|_| FilterError::Syntax(format!("invalid port {v:?}")))?);
                }
                "-s" | "--src" | "--source" => {
                    let v = value()?;
                    let addr = v.strip_suffix("/32").unwrap_or(v);
                    src = Some(addr.parse().map_err(|_| FilterError::Syntax(format!("invalid address {v:?}")))?);
                }
                "-j" | "--jump" => verdict = Some(value()?.parse()?),
                other => return Err(FilterError::Syntax(format!("unknown option {other:?}"))),
            }
        }
        let verdict = verdict.ok_or_else(|| FilterError::Syntax("missing -j target".to_string()))?;
        FilterRule::new(proto, dport, src, verdict)
    }
}

/// Rule-spec text as iptables-save prints it (without the chain prefix).
impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(src) = self.src {
            write!(f, "-s {src}/32 ")?;
        }
        if self.proto != Proto::Any {
            write!(f, "-p {} ", self.proto)?;
        }
        if let Some(port) = self.dport {
            write!(f, "--dport {port} ")?;
        }
        write!(f, "-j {}", self.verdict)
    }
}

/// A simulated datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub src: Ipv4Addr,
    pub sport: u16,
    pub proto: Proto,
    pub dport: u16,
    pub payload: Vec<u8>,
    pub arrival: SimTime,
}

impl Packet {
    pub fn udp(src: Ipv4Addr, sport: u16, dport: u16, payload: impl Into<Vec<u8>>, arrival: SimTime) -> Self {
        Packet { src, sport, proto: Proto::Udp, dport, payload: payload.into(), arrival }
    }

    pub fn tcp(src: Ipv4Addr, sport: u16, dport: u16, payload: impl Into<Vec<u8>>, arrival: SimTime) -> Self {
        Packet { src, sport, proto: Proto::Tcp, dport, payload: payload.into(), arrival }
    }
}

/// Selects rules for deletion; unset fields match anything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuleMatcher {
    pub proto: Option<Proto>,
    pub dport: Option<u16>,
    pub src: Option<Ipv4Addr>,
    pub verdict: Option<Verdict>,
}

impl RuleMatcher {
    pub fn source(src: Ipv4Addr) -> Self {
        RuleMatcher { src: Some(src), ..Default::default() }
    }

    pub fn exact(rule: &FilterRule) -> Self {
        RuleMatcher { proto: Some(rule.proto), dport: rule.dport, src: rule.src, verdict: Some(rule.verdict) }
    }

    pub fn selects(&self, rule: &FilterRule) -> bool {
        self.proto.is_none_or(|p| p == rule.proto)
            && self.dport.is_none_or(|p| Some(p) == rule.dport)
            && self.src.is_none_or(|s| Some(s) == rule.src)
            && self.verdict.is_none_or(|v| v == rule.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainOp {
    InsertHead(FilterRule),
    Append(FilterRule),
    DeleteMatching(RuleMatcher),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub name: String,
    pub rules: Vec<FilterRule>,
    pub default_policy: Verdict,
}

impl Default for Chain {
    fn default() -> Self {
        Chain { name: "INPUT".to_string(), rules: Vec::new(), default_policy: Verdict::Accept }
    }
}

impl Chain {
    /// Apply one mutation; returns how many rules were removed (zero for inserts).
    pub fn mutate(&mut self, op: ChainOp) -> usize {
        match op {
            ChainOp::InsertHead(rule) => {
                self.rules.insert(0, rule);
                0
            }
            ChainOp::Append(rule) => {
                self.rules.push(rule);
                0
            }
            ChainOp::DeleteMatching(m) => {
                let before = self.rules.len();
                self.rules.retain(|r| !m.selects(r));
                before - self.rules.len()
            }
        }
    }

    /// Index of the first rule matching `packet`.
    pub fn first_match(&self, packet: &Packet) -> Option<usize> {
        self.rules.iter().position(|r| r.matches(packet))
    }

    pub fn evaluate(&self, packet: &Packet) -> Verdict {
        self.first_match(packet).map_or(self.default_policy, |i| self.rules[i].verdict)
    }

    /// Apply one iptables command line, e.g.
    /// `iptables -I INPUT -p udp --dport 5060 -j ACCEPT`.
    pub fn apply_command(&mut self, line: &str) -> Result<(), FilterError> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let words = match words.first() {
            Some(&"iptables") => &words[1..],
            _ => &words[..],
        };
        let (op, chain, spec) = match words {
            [op, chain, spec @ ..] => (*op, *chain, spec),
            _ => return Err(FilterError::Syntax(format!("incomplete command {line:?}"))),
        };
        if chain != self.name {
            return Err(FilterError::Syntax(format!("unknown chain {chain:?}")));
        }
        match op {
            "-I" | "--insert" => self.mutate(ChainOp::InsertHead(FilterRule::parse_spec(spec)?)),
            "-A" | "--append" => self.mutate(ChainOp::Append(FilterRule::parse_spec(spec)?)),
            "-D" | "--delete" => self.mutate(ChainOp::DeleteMatching(RuleMatcher::exact(&FilterRule::parse_spec(spec)?))),
            "-P" | "--policy" => {
                let [target] = spec else {
                    return Err(FilterError::Syntax("-P takes exactly one target".to_string()));
                };
                self.default_policy = target.parse()?;
                0
            }
            other => return Err(FilterError::Syntax(format!("unsupported operation {other:?}"))),
        };
        Ok(())
    }

    /// iptables-save style dump: policy line then one `-A` line per rule.
    pub fn dump(&self) -> String {
        let mut out = format!("-P {} {}\n", self.name, self.default_policy);
        for rule in &self.rules {
            out.push_str(&format!("-A {} {}\n", self.name, rule));
        }
        out
    }

    /// Rebuild a chain from [`Chain::dump`] output.
    pub fn load(text: &str) -> Result<Chain, FilterError> {
        let mut chain = Chain::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            chain.apply_command(line)?;
        }
        Ok(chain)
    }
}

/// The firewall policy commands, fired in this order.
pub const STOCK_POLICY: [&str; 12] = [
    "iptables -I INPUT -p tcp -j DROP",
    "iptables -I INPUT -p tcp -dport 22 -j ACCEPT",
    "iptables -I INPUT -p icmp -j ACCEPT",
    "iptables -I INPUT -p udp -j DROP",
    "iptables -I INPUT -p udp --dport 5060 -j ACCEPT",
    "iptables -I INPUT -p udp --dport 3306 -j ACCEPT",
    "iptables -I INPUT -p tcp --dport 1723 -j ACCEPT",
    "iptables -I INPUT -p udp --dport 1723 -j ACCEPT",
    "iptables -I INPUT -p tcp --dport 25 -j ACCEPT",
    "iptables -I INPUT -p udp --dport 25 -j ACCEPT",
    "iptables -I INPUT -p tcp --dport 110 -j ACCEPT",
    "iptables -I INPUT -p udp --dport 110 -j ACCEPT",
];

pub fn stock_chain() -> Chain {
    let mut chain = Chain::default();
    for cmd in STOCK_POLICY {
        chain.apply_command(cmd).expect("stock policy commands are well formed");
    }
    chain
}
