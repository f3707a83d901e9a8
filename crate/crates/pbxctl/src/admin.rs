//! Admin subcommands. Each one loads a state file, changes it, and writes
//! it back.

use std::net::Ipv4Addr;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use minipbx::acl::{parse_statement, GrantTable, StatementKind, Principal, Privilege, Scope};
use minipbx::notify::{parse_journal, Category};
use minipbx::pktfilter::{stock_chain, Chain, ChainOp, FilterRule, RuleMatcher};
use minipbx::sentinel::Blacklist;

pub const FIREWALL_FILE: &str = "firewall.rules";
pub const BLACKLIST_FILE: &str = "blacklist.tsv";
pub const ALERTS_FILE: &str = "alerts.log";
pub const GRANTS_FILE: &str = "grants";
pub const SESSIONS_FILE: &str = "vpn-sessions.tsv";
pub const MAIL_FILE: &str = "mail.journal";

#[derive(Subcommand, Debug)]
pub enum FwCmd {
    /// Print the chain, one rule per line with its position.
    List,
    /// Insert a rule at the head, e.g. `fw insert -p tcp --dport 22 -j ACCEPT`.
    Insert {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, required = true)]
        rule: Vec<String>,
    },
    /// Append a rule at the tail.
    Append {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, required = true)]
        rule: Vec<String>,
    },
    /// Delete every rule equal to the one given.
    Delete {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, required = true)]
        rule: Vec<String>,
    },
    /// Set the default policy.
    Policy { verdict: String },
    /// Replace the chain with the stock policy.
    Reset,
}

#[derive(Subcommand, Debug)]
pub enum SentinelCmd {
    /// Blacklist and alert counts.
    Status,
    /// Lift a blacklist entry and its DROP rule.
    Unblock { src: Ipv4Addr },
}

#[derive(Subcommand, Debug)]
pub enum VpnCmd {
    Sessions,
    /// End a user's session.
    Kick { user: String },
}

#[derive(Subcommand, Debug)]
pub enum DbCmd {
    /// Apply a GRANT, e.g. `db grant SELECT ON attendance.students TO ivr@127.0.0.1`.
    Grant {
        #[arg(trailing_var_arg = true, required = true)]
        statement: Vec<String>,
    },
    /// Apply a REVOKE.
    Revoke {
        #[arg(trailing_var_arg = true, required = true)]
        statement: Vec<String>,
    },
    /// Exit 0 if the principal holds the privilege on the object, 1 otherwise.
    Check { principal: String, privilege: String, object: String },
    /// Print the effective grant table.
    Show,
}

#[derive(Subcommand, Debug)]
pub enum MailCmd {
    List {
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
}

fn read_opt(dir: &Path, name: &str) -> Result<Option<String>> {
    let path = dir.join(name);
    match std::fs::read_to_string(&path) {
        Ok(t) => Ok(Some(t)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn load_chain(dir: &Path) -> Result<Chain> {
    match read_opt(dir, FIREWALL_FILE)? {
        Some(text) => Chain::load(&text).with_context(|| format!("parsing {FIREWALL_FILE}")),
        None => Ok(stock_chain()),
    }
}

fn load_blacklist(dir: &Path) -> Result<Blacklist> {
    let text = read_opt(dir, BLACKLIST_FILE)?.unwrap_or_default();
    Blacklist::from_text(&text).map_err(anyhow::Error::msg).with_context(|| format!("parsing {BLACKLIST_FILE}"))
}

fn load_grants(dir: &Path) -> Result<(GrantTable, Vec<String>)> {
    let journal: Vec<String> = read_opt(dir, GRANTS_FILE)?.unwrap_or_default().lines().filter(|l| !l.trim().is_empty()).map(String::from).collect();
    let mut table = GrantTable::new();
    for (i, line) in journal.iter().enumerate() {
        let stmt = parse_statement(line).with_context(|| format!("{GRANTS_FILE} line {}", i + 1))?;
        table.apply(&stmt);
    }
    Ok((table, journal))
}

fn finish(result: Result<ExitCode>) -> ExitCode {
    result.unwrap_or_else(|e| {
        eprintln!("pbxctl: {e:#}");
        ExitCode::FAILURE
    })
}

pub fn fw(cmd: &FwCmd, dir: &Path) -> ExitCode {
    finish((|| {
        let mut chain = load_chain(dir)?;
        let op = match cmd {
            FwCmd::List => {
                println!("policy {}", chain.default_policy);
                for (i, r) in chain.rules.iter().enumerate() {
                    println!("{:>3}  {r}", i + 1);
                }
                return Ok(ExitCode::SUCCESS);
            }
            FwCmd::Reset => {
                write(dir, FIREWALL_FILE, &stock_chain().dump())?;
                return Ok(ExitCode::SUCCESS);
            }
            FwCmd::Policy { verdict } => {
                chain.default_policy = verdict.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                write(dir, FIREWALL_FILE, &chain.dump())?;
                return Ok(ExitCode::SUCCESS);
            }
            FwCmd::Insert { rule } | FwCmd::Append { rule } | FwCmd::Delete { rule } => {
                let words: Vec<&str> = rule.iter().map(String::as_str).collect();
                let rule = FilterRule::parse_spec(&words).map_err(|e| anyhow::anyhow!("{e}"))?;
                match cmd {
                    FwCmd::Insert { .. } => ChainOp::InsertHead(rule),
                    FwCmd::Append { .. } => ChainOp::Append(rule),
                    _ => ChainOp::DeleteMatching(RuleMatcher::exact(&rule)),
                }
            }
        };
        let deleting = matches!(op, ChainOp::DeleteMatching(_));
        let n = chain.mutate(op);
        if deleting && n == 0 {
            bail!("no matching rule");
        }
        write(dir, FIREWALL_FILE, &chain.dump())?;
        Ok(ExitCode::SUCCESS)
    })())
}

pub fn sentinel(cmd: &SentinelCmd, dir: &Path) -> ExitCode {
    finish((|| {
        let mut blacklist = load_blacklist(dir)?;
        match cmd {
            SentinelCmd::Status => {
                println!("blacklisted {}", blacklist.len());
                for (src, e) in &blacklist.entries {
                    println!("  {src}\tsince {}\tlevel {}\t{}", e.since, e.level, e.reason);
                }
                let mut by_level = [0u64; 16];
                for line in read_opt(dir, ALERTS_FILE)?.unwrap_or_default().lines() {
                    if let Some(level) = line.split('\t').nth(1).and_then(|l| l.parse::<usize>().ok()).filter(|l| *l < 16) {
                        by_level[level] += 1;
                    }
                }
                for (level, n) in by_level.iter().enumerate().filter(|(_, n)| **n > 0) {
                    println!("alerts level {level:>2}: {n}");
                }
            }
            SentinelCmd::Unblock { src } => {
                if blacklist.entries.remove(src).is_none() {
                    bail!("{src} is not blacklisted");
                }
                let mut chain = load_chain(dir)?;
                chain.mutate(ChainOp::DeleteMatching(RuleMatcher::exact(&FilterRule::drop_source(*src))));
                write(dir, BLACKLIST_FILE, &blacklist.to_text())?;
                write(dir, FIREWALL_FILE, &chain.dump())?;
                println!("unblocked {src}");
            }
        }
        Ok(ExitCode::SUCCESS)
    })())
}

pub fn vpn(cmd: &VpnCmd, dir: &Path) -> ExitCode {
    finish((|| {
        let text = read_opt(dir, SESSIONS_FILE)?.unwrap_or_default();
        match cmd {
            VpnCmd::Sessions => {
                println!("user\tleased\testablished");
                print!("{text}");
            }
            VpnCmd::Kick { user } => {
                let kept: Vec<&str> = text.lines().filter(|l| l.split('\t').next() != Some(user.as_str())).collect();
                if kept.len() == text.lines().count() {
                    bail!("{user} has no session");
                }
                write(dir, SESSIONS_FILE, &kept.iter().map(|l| format!("{l}\n")).collect::<String>())?;
                println!("kicked {user}");
            }
        }
        Ok(ExitCode::SUCCESS)
    })())
}

pub fn db(cmd: &DbCmd, dir: &Path) -> ExitCode {
    finish((|| {
        let (mut table, mut journal) = load_grants(dir)?;
        match cmd {
            DbCmd::Grant { statement } | DbCmd::Revoke { statement } => {
                let (keyword, kind) = match cmd {
                    DbCmd::Grant { .. } => ("GRANT", StatementKind::Grant),
                    _ => ("REVOKE", StatementKind::Revoke),
                };
                // Both `db grant SELECT ON ...` and `db grant "GRANT SELECT ON ..."` are accepted.
                let text = statement.join(" ");
                let first = text.split_whitespace().next().unwrap_or_default();
                let text = if first.eq_ignore_ascii_case(keyword) { text } else { format!("{keyword} {text}") };
                let stmt = parse_statement(&text)?;
                if stmt.kind != kind {
                    bail!("expected a {keyword} statement");
                }
                for w in table.apply(&stmt) {
                    eprintln!("warning: {w}");
                }
                journal.push(stmt.to_string());
                write(dir, GRANTS_FILE, &journal.iter().map(|l| format!("{l}\n")).collect::<String>())?;
                println!("{stmt}");
            }
            DbCmd::Check { principal, privilege, object } => {
                let who: Principal = principal.parse()?;
                let p: Privilege = privilege.parse()?;
                let scope: Scope = object.parse()?;
                let ok = table.check(&who, p, &scope);
                println!("{}", if ok { "granted" } else { "denied" });
                return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
            }
            DbCmd::Show => print!("{}", table.to_text()),
        }
        Ok(ExitCode::SUCCESS)
    })())
}

pub fn mail(cmd: &MailCmd, dir: &Path) -> ExitCode {
    finish((|| {
        let MailCmd::List { category, to } = cmd;
        let category: Option<Category> = category.as_deref().map(str::parse).transpose().map_err(anyhow::Error::msg)?;
        let entries = parse_journal(&read_opt(dir, MAIL_FILE)?.unwrap_or_default()).map_err(anyhow::Error::msg)?;
        for e in entries.iter().filter(|e| category.is_none_or(|c| c == e.category) && to.as_deref().is_none_or(|t| t == e.to)) {
            println!("{}\t{}\t{}\t{}\t{}", e.receipt, e.date, e.category, e.to, e.subject);
        }
        Ok(ExitCode::SUCCESS)
    })())
}
