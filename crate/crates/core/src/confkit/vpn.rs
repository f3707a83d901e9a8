use std::fmt::Write as _;
use std::net::Ipv4Addr;

use super::{logical_lines, ConfFile, ParseError};

/// pptpd.conf: the server's tunnel address and the inclusive pool leased to
/// clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TunnelConfig {
    pub local: Ipv4Addr,
    pub pool_start: Ipv4Addr,
    pub pool_end: Ipv4Addr,
}

impl TunnelConfig {
    pub fn pool_len(&self) -> u64 {
        u64::from(u32::from(self.pool_end)) - u64::from(u32::from(self.pool_start)) + 1
    }

    pub fn pool(&self) -> impl Iterator<Item = Ipv4Addr> {
        (u32::from(self.pool_start)..=u32::from(self.pool_end)).map(Ipv4Addr::from)
    }

    pub fn in_pool(&self, addr: Ipv4Addr) -> bool {
        (self.pool_start..=self.pool_end).contains(&addr)
    }

    pub fn to_pptpd_text(&self) -> String {
        format!("localip {}\nremoteip {}-{}\n", self.local, self.pool_start, self.pool_end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub user: String,
    pub secret: String,
}

/// chap-secrets rows. Only user and secret are kept; the service and address
/// columns are checked for presence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CredentialTable {
    pub entries: Vec<Credential>,
}

impl CredentialTable {
    pub fn secret_for(&self, user: &str) -> Option<&str> {
        self.entries.iter().find(|c| c.user == user).map(|c| c.secret.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.entries {
            let _ = writeln!(out, "{}\tpptpd\t\"{}\"\t*", c.user, c.secret);
        }
        out
    }
}

pub fn parse_pptpd_conf(text: &str) -> Result<TunnelConfig, ParseError> {
    let err = |line, msg: String| ParseError::new(ConfFile::Pptpd, line, msg);
    let mut local = None;
    let mut pool = None;
    let mut last_line = 1;

    for (lineno, line) in logical_lines(text, false) {
        last_line = lineno;
        let mut words = line.split_whitespace();
        let directive = words.next().unwrap_or_default();
        let value = words.next();
        match directive {
            "localip" => {
                let v = value.ok_or_else(|| err(lineno, "localip needs an address".to_string()))?;
                local = Some((lineno, v.parse::<Ipv4Addr>().map_err(|_| err(lineno, format!("invalid address {v:?}")))?));
            }
            "remoteip" => {
                let v = value.ok_or_else(|| err(lineno, "remoteip needs an address range".to_string()))?;
                let (a, b) = v.split_once('-').ok_or_else(|| err(lineno, format!("expected A-B range, found {v:?}")))?;
                let parse = |s: &str| s.parse::<Ipv4Addr>().map_err(|_| err(lineno, format!("invalid address {s:?}")));
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(err(lineno, format!("empty address pool {v}")));
                }
                pool = Some((lineno, a, b));
            }
            // option, logwtmp, speed, ... carry no tunnel semantics here.
            _ => {}
        }
    }
    let (_, local) = local.ok_or_else(|| err(last_line, "missing localip".to_string()))?;
    let (pool_line, pool_start, pool_end) = pool.ok_or_else(|| err(last_line, "missing remoteip".to_string()))?;
    let config = TunnelConfig { local, pool_start, pool_end };
    if config.in_pool(local) {
        return Err(err(pool_line, format!("localip {local} lies inside the remote pool")));
    }
    Ok(config)
}

pub fn parse_chap_secrets(text: &str) -> Result<CredentialTable, ParseError> {
    let err = |line, msg: String| ParseError::new(ConfFile::ChapSecrets, line, msg);
    let mut table = CredentialTable::default();
    for (lineno, line) in logical_lines(text, false) {
        let cols: Vec<&str> = line.split_whitespace().map(|c| c.trim_matches('"')).collect();
        if cols.len() != 4 {
            return Err(err(lineno, format!("expected 4 columns (client server secret addr), found {}", cols.len())));
        }
        let (user, secret) = (cols[0], cols[2]);
        if user.is_empty() {
            return Err(err(lineno, "empty user name".to_string()));
        }
        if table.secret_for(user).is_some() {
            return Err(err(lineno, format!("duplicate user {user}")));
        }
        table.entries.push(Credential { user: user.to_string(), secret: secret.to_string() });
    }
    Ok(table)
}

pub fn parse_vpn_config(pptpd_text: &str, chap_text: &str) -> Result<(TunnelConfig, CredentialTable), ParseError> {
    Ok((parse_pptpd_conf(pptpd_text)?, parse_chap_secrets(chap_text)?))
}
