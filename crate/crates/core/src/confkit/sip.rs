use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{is_digits, logical_lines, section_header, ConfFile, MailboxRef, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeerType {
    #[default]
    Friend,
    Peer,
    User,
}

impl PeerType {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "friend" => Some(PeerType::Friend),
            "peer" => Some(PeerType::Peer),
            "user" => Some(PeerType::User),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            PeerType::Friend => "friend",
            PeerType::Peer => "peer",
            PeerType::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PeerHost {
    #[default]
    Dynamic,
    Static(String),
}

/// One `[peer]` section of sip.conf.
///
/// `insecure`, `nat`, `qualify` and `dtmfmode` are carried but have no
/// behavior attached; keys the parser does not know are kept in `extras`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerEntry {
    pub name: String,
    pub kind: PeerType,
    pub username: Option<String>,
    pub host: PeerHost,
    pub secret: Option<String>,
    pub dtmfmode: Option<String>,
    pub insecure: Option<String>,
    pub canreinvite: Option<bool>,
    pub nat: Option<String>,
    pub qualify: Option<String>,
    pub mailbox: Option<MailboxRef>,
    pub context: String,
    pub extras: Vec<(String, String)>,
}

impl PeerEntry {
    pub fn new(name: impl Into<String>) -> Self {
        PeerEntry {
            name: name.into(),
            kind: PeerType::Friend,
            username: None,
            host: PeerHost::Dynamic,
            secret: None,
            dtmfmode: None,
            insecure: None,
            canreinvite: None,
            nat: None,
            qualify: None,
            mailbox: None,
            context: "default".to_string(),
            extras: Vec::new(),
        }
    }

    /// The name a SIP client authenticates with.
    pub fn auth_name(&self) -> &str {
        self.username.as_deref().unwrap_or(&self.name)
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "yes" | "true" | "on" | "1" => Some(true),
        "no" | "false" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// Parse sip.conf into peer entries in file order. A `[general]` section
/// holds server-wide settings and is skipped.
pub fn parse_sip_conf(text: &str) -> Result<Vec<PeerEntry>, ParseError> {
    let err = |line, msg: String| ParseError::new(ConfFile::Sip, line, msg);
    let mut peers: Vec<PeerEntry> = Vec::new();
    let mut seen = BTreeSet::new();
    // None before the first header, Some(None) inside [general].
    let mut current: Option<Option<PeerEntry>> = None;

    for (lineno, line) in logical_lines(text, true) {
        if let Some(header) = section_header(line) {
            let name = header.map_err(|_| err(lineno, format!("malformed section header {line:?}")))?;
            if let Some(Some(done)) = current.take() {
                peers.push(done);
            }
            if name.eq_ignore_ascii_case("general") {
                current = Some(None);
                continue;
            }
            if !seen.insert(name.to_string()) {
                return Err(err(lineno, format!("duplicate peer {name}")));
            }
            current = Some(Some(PeerEntry::new(name)));
            continue;
        }

        let (key, value) = split_assignment(line).ok_or_else(|| err(lineno, format!("expected key=value, found {line:?}")))?;
        let peer = match current.as_mut() {
            None => return Err(err(lineno, "setting outside any section".to_string())),
            Some(None) => continue,
            Some(Some(peer)) => peer,
        };
        let lower = key.to_ascii_lowercase();
        match lower.as_str() {
            "type" => {
                peer.kind = PeerType::parse(value).ok_or_else(|| err(lineno, format!("unknown peer type {value:?}")))?
            }
            "username" => peer.username = Some(value.to_string()),
            "host" => {
                peer.host = if value.eq_ignore_ascii_case("dynamic") {
                    PeerHost::Dynamic
                } else if value.is_empty() {
                    return Err(err(lineno, "empty host".to_string()));
                } else {
                    PeerHost::Static(value.to_string())
                }
            }
            "secret" => {
                if !is_digits(value) {
                    return Err(err(lineno, format!("secret must be decimal digits, found {value:?}")));
                }
                peer.secret = Some(value.to_string());
            }
            "dtmfmode" => peer.dtmfmode = Some(value.to_string()),
            "insecure" => peer.insecure = Some(value.to_string()),
            "canreinvite" => {
                peer.canreinvite =
                    Some(parse_bool(value).ok_or_else(|| err(lineno, format!("canreinvite expects yes/no, found {value:?}")))?)
            }
            "nat" => peer.nat = Some(value.to_string()),
            "qualify" => peer.qualify = Some(value.to_string()),
            "mailbox" => {
                peer.mailbox = Some(
                    MailboxRef::parse(value).ok_or_else(|| err(lineno, format!("mailbox must be number@context, found {value:?}")))?,
                )
            }
            "context" => {
                if !super::is_identifier(value) {
                    return Err(err(lineno, format!("invalid context name {value:?}")));
                }
                peer.context = value.to_string();
            }
            _ => peer.extras.push((key.to_string(), value.to_string())),
        }
    }
    if let Some(Some(done)) = current {
        peers.push(done);
    }
    Ok(peers)
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (key, value) = line.split_once('=')?;
    let value = value.strip_prefix('>').unwrap_or(value);
    let key = key.trim();
    if key.is_empty() {
        return None;
    }
    Some((key, value.trim()))
}

/// Render peers back to sip.conf text. Reparsing the output yields equal entries.
pub fn write_sip_conf(peers: &[PeerEntry]) -> String {
    let mut out = String::new();
    for peer in peers {
        let _ = writeln!(out, "[{}]", peer.name);
        let _ = writeln!(out, "type={}", peer.kind.as_str());
        if let Some(u) = &peer.username {
            let _ = writeln!(out, "username={u}");
        }
        match &peer.host {
            PeerHost::Dynamic => out.push_str("host=dynamic\n"),
            PeerHost::Static(h) => {
                let _ = writeln!(out, "host={h}");
            }
        }
        let optional = [
            ("secret", peer.secret.as_deref()),
            ("dtmfmode", peer.dtmfmode.as_deref()),
            ("insecure", peer.insecure.as_deref()),
            ("canreinvite", peer.canreinvite.map(|b| if b { "yes" } else { "no" })),
            ("nat", peer.nat.as_deref()),
            ("qualify", peer.qualify.as_deref()),
        ];
        for (key, value) in optional {
            if let Some(v) = value {
                let _ = writeln!(out, "{key}={v}");
            }
        }
        if let Some(mb) = &peer.mailbox {
            let _ = writeln!(out, "mailbox={mb}");
        }
        let _ = writeln!(out, "context={}", peer.context);
        for (k, v) in &peer.extras {
            let _ = writeln!(out, "{k}={v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_harish_peer() {
        let peers = parse_sip_conf("[harish]\ntype=friend\nsecret=1234\nhost=dynamic\ncontext=office").unwrap();
        assert_eq!(peers.len(), 1);
        let p = &peers[0];
        assert_eq!(p.name, "harish");
        assert_eq!(p.secret.as_deref(), Some("1234"));
        assert_eq!(p.host, PeerHost::Dynamic);
        assert_eq!(p.context, "office");
        assert_eq!(p.kind, PeerType::Friend);
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert_eq!(parse_sip_conf("").unwrap(), vec![]);
    }

    #[test]
    fn non_digit_secret_names_line_two() {
        let e = parse_sip_conf("[a]\nsecret=12x4").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("digits"));
    }

    #[test]
    fn rejects_duplicates_and_bad_headers() {
        assert_eq!(parse_sip_conf("[a]\n[a]").unwrap_err().line, 2);
        assert_eq!(parse_sip_conf("[a\nx=1").unwrap_err().line, 1);
        assert_eq!(parse_sip_conf("x=1").unwrap_err().line, 1);
        assert_eq!(parse_sip_conf("[a]\nmailbox=756").unwrap_err().line, 2);
    }

    #[test]
    fn keeps_unknown_keys_and_skips_general() {
        let text = "[general]\nport=5060\n[bob]\ntype = peer\ncallerid => Bob <200>\nmailbox=200@vmail\ncanreinvite=no";
        let peers = parse_sip_conf(text).unwrap();
        assert_eq!(peers.len(), 1);
        assert_eq!(peers[0].extras, vec![("callerid".to_string(), "Bob <200>".to_string())]);
        assert_eq!(peers[0].canreinvite, Some(false));
        assert_eq!(peers[0].mailbox.as_ref().unwrap().to_string(), "200@vmail");
    }

    #[test]
    fn round_trips_through_writer() {
        let text = "[harish]\ntype=friend\nusername=harish\nsecret=1234\nhost=dynamic\ndtmfmode=rfc2833\ninsecure=port\ncanreinvite=no\nnat=yes\nqualify=yes\nmailbox=756@vmail\ncontext=office\nlanguage=en\n\n[lab]\ntype=peer\nhost=192.168.100.40\ncontext=lab\n";
        let peers = parse_sip_conf(text).unwrap();
        assert_eq!(parse_sip_conf(&write_sip_conf(&peers)).unwrap(), peers);
    }
}
