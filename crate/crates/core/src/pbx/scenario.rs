//! Scenario files.
//!
//! Header lines configure the run; `AT <seconds> <verb> ...` lines are the
//! script. `#` at the start of a word begins a comment, so keyed digits
//! such as `1001#2222#` survive.
//!
//! ```text
//! name happy-call
//! seed 7
//! config sip-conf sip.conf
//! client harish 192.168.100.36
//! student 1001 2222 87
//! grant SELECT ON attendance.students TO ivr@127.0.0.1
//! set rate-threshold 10
//! AT 1 register harish
//! AT 3 call harish 111
//! AT 9 assert call-state harish active
//! ```

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::confkit::MailboxRef;
use crate::sipnode::CallState;
use crate::SimTime;

use super::attack::AttackKind;
use super::config::ConfigPaths;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSpec {
    pub peer: String,
    pub addr: Ipv4Addr,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assertion {
    Metric { name: String, value: u64 },
    Blacklisted(Ipv4Addr),
    NotBlacklisted(Ipv4Addr),
    Registered(String),
    NotRegistered(String),
    CallState { client: String, state: CallState },
    Said { client: String, digits: String },
    NotSaid(String),
    Mailbox { mailbox: MailboxRef, count: usize },
    Leased { client: String, addr: Ipv4Addr },
    Check { principal: String, privilege: String, object: String, expected: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verb {
    Register(String),
    Unregister(String),
    Call { client: String, exten: String, dtmf: Option<String> },
    Answer(String),
    Bye(String),
    Dtmf { client: String, digits: String },
    Attack { kind: AttackKind, src: AttackSource },
    Assert(Assertion),
    /// A full GRANT or REVOKE statement.
    Statement(String),
    Vpn { client: String, user: String, password: String },
    Unblock(Ipv4Addr),
}

/// Where attack traffic originates: a bare address, or a scripted client
/// (so the server's replies reach a live endpoint).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackSource {
    Addr(Ipv4Addr),
    Client(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub at: SimTime,
    pub line: usize,
    pub text: String,
    pub verb: Verb,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Student {
    pub id: String,
    pub password: String,
    pub attendance: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    pub rate_threshold: Option<u32>,
    pub rate_window: Option<Duration>,
    pub auto_response: Option<bool>,
    pub log_level: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub configs: ConfigPaths,
    pub clients: Vec<ClientSpec>,
    pub students: Vec<Student>,
    pub grants: Vec<String>,
    pub settings: Settings,
    pub steps: Vec<ScriptStep>,
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError { line, message: message.into() }
}

fn strip_comment(raw: &str) -> &str {
    let mut prev_space = true;
    for (i, c) in raw.char_indices() {
        if c == '#' && prev_space {
            return &raw[..i];
        }
        prev_space = c.is_whitespace();
    }
    raw
}

fn arg<'a>(words: &[&'a str], i: usize, line: usize, what: &str) -> Result<&'a str, ScenarioError> {
    words.get(i).copied().ok_or_else(|| err(line, format!("missing {what}")))
}

fn num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, ScenarioError> {
    s.parse().map_err(|_| err(line, format!("bad {what} {s:?}")))
}

fn ip(s: &str, line: usize) -> Result<Ipv4Addr, ScenarioError> {
    num(s, line, "address")
}

fn on_off(s: &str, line: usize) -> Result<bool, ScenarioError> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(err(line, format!("expected on/off, got {s:?}"))),
    }
}

fn seconds(s: &str, line: usize) -> Result<Duration, ScenarioError> {
    let t = SimTime::parse_secs(s).ok_or_else(|| err(line, format!("bad time {s:?}")))?;
    Ok(Duration::from_micros(t.as_micros()))
}

fn parse_assertion(w: &[&str], line: usize) -> Result<Assertion, ScenarioError> {
    let kind = arg(w, 0, line, "assertion")?;
    let a = |i, what| arg(w, i, line, what);
    Ok(match kind {
        "metric" => Assertion::Metric { name: a(1, "metric name")?.to_string(), value: num(a(2, "value")?, line, "value")? },
        "blacklisted" => Assertion::Blacklisted(ip(a(1, "address")?, line)?),
        "not-blacklisted" => Assertion::NotBlacklisted(ip(a(1, "address")?, line)?),
        "registered" => Assertion::Registered(a(1, "peer")?.to_string()),
        "not-registered" => Assertion::NotRegistered(a(1, "peer")?.to_string()),
        "call-state" => {
            let s = a(2, "state")?;
            let state = CallState::parse(s).ok_or_else(|| err(line, format!("unknown call state {s:?}")))?;
            Assertion::CallState { client: a(1, "client")?.to_string(), state }
        }
        "said" => Assertion::Said { client: a(1, "client")?.to_string(), digits: a(2, "digits")?.to_string() },
        "not-said" => Assertion::NotSaid(a(1, "client")?.to_string()),
        "mailbox" => {
            let r = a(1, "mailbox")?;
            let mailbox = MailboxRef::parse(r).ok_or_else(|| err(line, format!("bad mailbox {r:?}")))?;
            Assertion::Mailbox { mailbox, count: num(a(2, "count")?, line, "count")? }
        }
        "leased" => Assertion::Leased { client: a(1, "client")?.to_string(), addr: ip(a(2, "address")?, line)? },
        "check" | "no-check" => {
            // check <principal> <privilege...> ON <object>
            let on = w.iter().position(|x| x.eq_ignore_ascii_case("on")).ok_or_else(|| err(line, "check needs ON <object>"))?;
            if on < 3 {
                return Err(err(line, "check needs a principal and a privilege"));
            }
            Assertion::Check {
                principal: a(1, "principal")?.to_string(),
                privilege: w[2..on].join(" "),
                object: a(on + 1, "object")?.to_string(),
                expected: kind == "check",
            }
        }
        other => return Err(err(line, format!("unknown assertion {other:?}"))),
    })
}

fn parse_attack(w: &[&str], line: usize) -> Result<(AttackKind, AttackSource), ScenarioError> {
    let a = |i, what| arg(w, i, line, what);
    match a(0, "attack kind")? {
        "register-flood" => {
            let kind = AttackKind::RegisterFlood {
                n: num(a(2, "count")?, line, "count")?,
                window: seconds(a(3, "window")?, line)?,
                user: w.get(4).unwrap_or(&"anonymous").to_string(),
            };
            Ok((kind, AttackSource::Addr(ip(a(1, "source")?, line)?)))
        }
        "port-scan" => {
            let range = a(2, "port range")?;
            let (lo, hi) = range.split_once('-').ok_or_else(|| err(line, "port range must be lo-hi"))?;
            let (lo, hi) = (num::<u16>(lo, line, "port")?, num::<u16>(hi, line, "port")?);
            if lo == 0 || lo > hi {
                return Err(err(line, format!("empty port range {range}")));
            }
            Ok((AttackKind::PortScan { lo, hi }, AttackSource::Addr(ip(a(1, "source")?, line)?)))
        }
        "brute-force" => match a(1, "target kind")? {
            "peer" => Ok((
                AttackKind::BruteForcePeer { peer: a(3, "peer")?.to_string(), attempts: num(a(4, "attempts")?, line, "attempts")? },
                AttackSource::Addr(ip(a(2, "source")?, line)?),
            )),
            "box" => Ok((
                AttackKind::BruteForceBox {
                    exten: a(3, "extension")?.to_string(),
                    attempts: num(a(4, "attempts")?, line, "attempts")?,
                    avoid: w.get(5).map(|s| s.to_string()),
                },
                AttackSource::Client(a(2, "client")?.to_string()),
            )),
            other => Err(err(line, format!("brute-force target must be peer or box, got {other:?}"))),
        },
        other => Err(err(line, format!("unknown attack {other:?}"))),
    }
}

fn parse_verb(w: &[&str], line: usize, rest: &str) -> Result<Verb, ScenarioError> {
    let a = |i, what| arg(w, i, line, what);
    Ok(match a(0, "verb")? {
        "register" => Verb::Register(a(1, "client")?.to_string()),
        "unregister" => Verb::Unregister(a(1, "client")?.to_string()),
        "call" => Verb::Call { client: a(1, "client")?.to_string(), exten: a(2, "extension")?.to_string(), dtmf: w.get(3).map(|s| s.to_string()) },
        "answer" => Verb::Answer(a(1, "client")?.to_string()),
        "bye" => Verb::Bye(a(1, "client")?.to_string()),
        "dtmf" => Verb::Dtmf { client: a(1, "client")?.to_string(), digits: a(2, "digits")?.to_string() },
        "attack" => {
            let (kind, src) = parse_attack(&w[1..], line)?;
            Verb::Attack { kind, src }
        }
        "assert" => Verb::Assert(parse_assertion(&w[1..], line)?),
        "grant" => Verb::Statement(format!("GRANT {rest}")),
        "revoke" => Verb::Statement(format!("REVOKE {rest}")),
        "vpn" => Verb::Vpn { client: a(1, "client")?.to_string(), user: a(2, "user")?.to_string(), password: a(3, "password")?.to_string() },
        "unblock" => Verb::Unblock(ip(a(1, "address")?, line)?),
        other => return Err(err(line, format!("unknown verb {other:?}"))),
    })
}

impl Scenario {
    /// Parse scenario text; relative config paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario::default();
        let mut last = SimTime::ZERO;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = strip_comment(raw).trim();
            if body.is_empty() {
                continue;
            }
            let words: Vec<&str> = body.split_whitespace().collect();
            let a = |i, what| arg(&words, i, line, what);
            match words[0] {
                "name" => sc.name = a(1, "name")?.to_string(),
                "seed" => sc.seed = num(a(1, "seed")?, line, "seed")?,
                "config" => {
                    let path: PathBuf = base.join(a(2, "path")?);
                    let slot = match a(1, "config kind")? {
                        "sip-conf" => &mut sc.configs.sip_conf,
                        "extensions-conf" => &mut sc.configs.extensions_conf,
                        "voicemail-conf" => &mut sc.configs.voicemail_conf,
                        "pptpd-conf" => &mut sc.configs.pptpd_conf,
                        "chap-secrets" => &mut sc.configs.chap_secrets,
                        other => return Err(err(line, format!("unknown config kind {other:?}"))),
                    };
                    *slot = Some(path);
                }
                "client" => {
                    let port = words.get(3).map(|p| num(p, line, "port")).transpose()?.unwrap_or(5060);
                    sc.clients.push(ClientSpec { peer: a(1, "peer")?.to_string(), addr: ip(a(2, "address")?, line)?, port });
                }
                "student" => sc.students.push(Student {
                    id: a(1, "id")?.to_string(),
                    password: a(2, "password")?.to_string(),
                    attendance: num(a(3, "attendance")?, line, "attendance")?,
                }),
                "grant" => sc.grants.push(format!("GRANT {}", body["grant".len()..].trim())),
                "set" => {
                    let v = a(2, "value")?;
                    match a(1, "setting")? {
                        "rate-threshold" => sc.settings.rate_threshold = Some(num(v, line, "threshold")?),
                        "rate-window" => sc.settings.rate_window = Some(seconds(v, line)?),
                        "auto-response" => sc.settings.auto_response = Some(on_off(v, line)?),
                        "log-level" => sc.settings.log_level = Some(num(v, line, "level")?),
                        other => return Err(err(line, format!("unknown setting {other:?}"))),
                    }
                }
                "AT" => {
                    let at = SimTime::parse_secs(a(1, "time")?).ok_or_else(|| err(line, format!("bad time {:?}", words[1])))?;
                    if at < last {
                        return Err(err(line, format!("step at {at} precedes the previous step at {last}")));
                    }
                    last = at;
                    let verb_text = body[2..].trim_start().split_once(char::is_whitespace).map_or("", |(_, v)| v.trim());
                    if verb_text.is_empty() {
                        return Err(err(line, "missing verb"));
                    }
                    let rest = verb_text.split_once(char::is_whitespace).map_or("", |(_, r)| r.trim());
                    let verb = parse_verb(&words[2..], line, rest)?;
                    sc.steps.push(ScriptStep { at, line, text: verb_text.to_string(), verb });
                }
                other => return Err(err(line, format!("unknown directive {other:?}"))),
            }
        }
        let known: Vec<&str> = sc.clients.iter().map(|c| c.peer.as_str()).collect();
        for step in &sc.steps {
            let named = match &step.verb {
                Verb::Register(c) | Verb::Unregister(c) | Verb::Answer(c) | Verb::Bye(c) => Some(c),
                Verb::Call { client, .. } | Verb::Dtmf { client, .. } | Verb::Vpn { client, .. } => Some(client),
                Verb::Attack { src: AttackSource::Client(c), .. } => Some(c),
                _ => None,
            };
            if let Some(c) = named.filter(|c| !known.contains(&c.as_str())) {
                return Err(err(step.line, format!("unknown client {c:?}")));
            }
        }
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario, super::StartupError> {
        let text = std::fs::read_to_string(path).map_err(|source| super::StartupError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut sc = Scenario::parse(&text, base).map_err(|e| super::StartupError::Other(format!("{}: {e}", path.display())))?;
        if sc.name.is_empty() {
            sc.name = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        }
        Ok(sc)
    }

    pub fn end_time(&self) -> SimTime {
        self.steps.last().map_or(SimTime::ZERO, |s| s.at)
    }
}
