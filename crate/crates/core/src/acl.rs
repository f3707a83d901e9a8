//! GRANT/REVOKE privilege engine and the attendance store it guards.
//!
//! Grants are `(principal, scope, privilege)` triples. Revoking a narrow
//! scope that is still covered by a wildcard grant records a revoke shadow
//! at that scope, and `check` lets the most specific entry win.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::sipnode::md5_hex;

pub const ATTENDANCE_DB: &str = "attendance";
pub const ATTENDANCE_TABLE: &str = "students";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Privilege {
    Alter,
    Create,
    Delete,
    Drop,
    Index,
    Insert,
    Select,
    Update,
    CreateTemporaryTables,
    File,
    GrantOption,
    LockTables,
    Process,
    Reload,
    Super,
    Shutdown,
    ShowDatabases,
    ReplicationClient,
    ReplicationSlave,
}

impl Privilege {
    pub const ACCESS: [Privilege; 8] = [
        Privilege::Alter,
        Privilege::Create,
        Privilege::Delete,
        Privilege::Drop,
        Privilege::Index,
        Privilege::Insert,
        Privilege::Select,
        Privilege::Update,
    ];

    pub const ADMINISTRATIVE: [Privilege; 11] = [
        Privilege::CreateTemporaryTables,
        Privilege::File,
        Privilege::GrantOption,
        Privilege::LockTables,
        Privilege::Process,
        Privilege::Reload,
        Privilege::Super,
        Privilege::Shutdown,
        Privilege::ShowDatabases,
        Privilege::ReplicationClient,
        Privilege::ReplicationSlave,
    ];

    pub fn is_access(self) -> bool {
        Privilege::ACCESS.contains(&self)
    }

    /// Access privileges other than SELECT.
    pub fn is_mutating(self) -> bool {
        self.is_access() && self != Privilege::Select
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Privilege::Alter => "ALTER",
            Privilege::Create => "CREATE",
            Privilege::Delete => "DELETE",
            Privilege::Drop => "DROP",
            Privilege::Index => "INDEX",
            Privilege::Insert => "INSERT",
            Privilege::Select => "SELECT",
            Privilege::Update => "UPDATE",
            Privilege::CreateTemporaryTables => "CREATE TEMPORARY TABLES",
            Privilege::File => "FILE",
            Privilege::GrantOption => "GRANT OPTION",
            Privilege::LockTables => "LOCK TABLES",
            Privilege::Process => "PROCESS",
            Privilege::Reload => "RELOAD",
            Privilege::Super => "SUPER",
            Privilege::Shutdown => "SHUTDOWN",
            Privilege::ShowDatabases => "SHOW DATABASES",
            Privilege::ReplicationClient => "REPLICATION CLIENT",
            Privilege::ReplicationSlave => "REPLICATION SLAVE",
        }
    }
}

impl FromStr for Privilege {
    type Err = AclError;

    /// Case-insensitive, whitespace-normalised. `SHUT DOWN` and `SHUTDOWN`
    /// are the same privilege.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_uppercase();
        if norm == "SHUT DOWN" {
            return Ok(Privilege::Shutdown);
        }
        Privilege::ACCESS
            .iter()
            .chain(Privilege::ADMINISTRATIVE.iter())
            .find(|p| p.as_str() == norm)
            .copied()
            .ok_or_else(|| AclError::UnknownPrivilege(s.trim().to_string()))
    }
}

impl fmt::Display for Privilege {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AclError {
    #[error("unknown privilege {0:?}")]
    UnknownPrivilege(String),
    #[error("malformed scope {0:?}")]
    BadScope(String),
    #[error("malformed statement: {0}")]
    Syntax(String),
    #[error("{principal} lacks {privilege} on {object}")]
    Unauthorized { principal: Principal, privilege: Privilege, object: Scope },
    #[error("no student {0}")]
    NoSuchStudent(String),
    #[error("store: {0}")]
    Store(String),
}

/// `'user'@host`. A host of `%` matches nothing special here; principals
/// compare exactly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Principal {
    pub user: String,
    pub host: String,
}

impl Principal {
    pub fn new(user: impl Into<String>, host: impl Into<String>) -> Self {
        Principal { user: user.into(), host: host.into() }
    }

    /// The account the IVR uses for attendance lookups.
    pub fn ivr() -> Self {
        Principal::new("ivr", "127.0.0.1")
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}'@{}", self.user, self.host)
    }
}

impl FromStr for Principal {
    type Err = AclError;

    /// `user@host`, either part optionally quoted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (user, host) = s.rsplit_once('@').ok_or_else(|| AclError::Syntax(format!("expected user@host, got {s:?}")))?;
        let unquote = |t: &str| t.trim().trim_matches(|c| c == '\'' || c == '"' || c == '`').to_string();
        let (user, host) = (unquote(user), unquote(host));
        if user.is_empty() || host.is_empty() {
            return Err(AclError::Syntax(format!("expected user@host, got {s:?}")));
        }
        Ok(Principal { user, host })
    }
}

/// `db.table` where either side may be `*`; `*.table` is not allowed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scope {
    pub db: Option<String>,
    pub table: Option<String>,
}

impl Scope {
    pub fn all() -> Self {
        Scope { db: None, table: None }
    }

    pub fn table(db: &str, table: &str) -> Self {
        Scope { db: Some(db.to_string()), table: Some(table.to_string()) }
    }

    pub fn database(db: &str) -> Self {
        Scope { db: Some(db.to_string()), table: None }
    }

    /// 0 for `*.*`, 1 for `db.*`, 2 for `db.table`.
    pub fn specificity(&self) -> u8 {
        u8::from(self.db.is_some()) + u8::from(self.table.is_some())
    }

    /// Whether every object in `other` is also in `self`.
    pub fn covers(&self, other: &Scope) -> bool {
        let part = |mine: &Option<String>, theirs: &Option<String>| match (mine, theirs) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => a == b,
        };
        part(&self.db, &other.db) && part(&self.table, &other.table)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.db.as_deref().unwrap_or("*"), self.table.as_deref().unwrap_or("*"))
    }
}

impl FromStr for Scope {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AclError::BadScope(s.to_string());
        let (db, table) = s.trim().split_once('.').ok_or_else(bad)?;
        let ident = |t: &str| -> Result<Option<String>, AclError> {
            let t = t.trim_matches('`');
            if t == "*" {
                Ok(None)
            } else if !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') {
                Ok(Some(t.to_string()))
            } else {
                Err(bad())
            }
        };
        let scope = Scope { db: ident(db)?, table: ident(table)? };
        if scope.db.is_none() && scope.table.is_some() {
            return Err(bad());
        }
        Ok(scope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatementKind {
    Grant,
    Revoke,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub kind: StatementKind,
    pub privileges: Vec<Privilege>,
    pub scope: Scope,
    pub principal: Principal,
    pub password: Option<String>,
}

fn find_keyword(upper: &str, kw: &str, from: usize) -> Option<usize> {
    upper[from..].match_indices(kw).map(|(i, _)| i + from).find(|&i| {
        let before = upper[..i].chars().next_back().is_none_or(char::is_whitespace);
        let after = upper[i + kw.len()..].chars().next().is_none_or(char::is_whitespace);
        before && after
    })
}

/// Parse `GRANT|REVOKE <privs|ALL> ON <scope> TO|FROM 'user'@host [IDENTIFIED BY 'pw']`.
pub fn parse_statement(text: &str) -> Result<Statement, AclError> {
    let text = text.trim().trim_end_matches(';').trim();
    let text = text.strip_prefix('$').map_or(text, str::trim_start);
    let upper = text.to_ascii_uppercase();
    let syntax = |m: &str| AclError::Syntax(m.to_string());

    let (kind, rest_at) = if upper.starts_with("GRANT ") {
        (StatementKind::Grant, 6)
    } else if upper.starts_with("REVOKE ") {
        (StatementKind::Revoke, 7)
    } else {
        return Err(syntax("expected GRANT or REVOKE"));
    };
    let on = find_keyword(&upper, "ON", rest_at).ok_or_else(|| syntax("missing ON"))?;
    let to = find_keyword(&upper, "TO", on + 2)
        .or_else(|| find_keyword(&upper, "FROM", on + 2))
        .ok_or_else(|| syntax("missing TO"))?;
    let to_len = if upper[to..].starts_with("TO") { 2 } else { 4 };
    let identified = find_keyword(&upper, "IDENTIFIED", to + to_len);

    let priv_text = text[rest_at..on].trim();
    let privileges = match priv_text.to_ascii_uppercase().split_whitespace().collect::<Vec<_>>().join(" ").as_str() {
        "ALL" | "ALL PRIVILEGES" => Privilege::ACCESS.to_vec(),
        _ => {
            let mut v: Vec<Privilege> = priv_text.split(',').map(str::parse).collect::<Result<_, _>>()?;
            v.dedup();
            v
        }
    };
    if privileges.is_empty() {
        return Err(syntax("empty privilege list"));
    }
    let scope: Scope = text[on + 2..to].trim().parse()?;
    let principal_end = identified.unwrap_or(text.len());
    let principal: Principal = text[to + to_len..principal_end].trim().parse()?;
    let password = match identified {
        None => None,
        Some(at) => {
            let tail = text[at + "IDENTIFIED".len()..].trim_start();
            let tail = tail
                .get(..2)
                .filter(|b| b.eq_ignore_ascii_case("BY"))
                .map(|_| tail[2..].trim())
                .ok_or_else(|| syntax("expected IDENTIFIED BY"))?;
            Some(tail.trim_matches(|c| c == '\'' || c == '"').to_string())
        }
    };
    Ok(Statement { kind, privileges, scope, principal, password })
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (verb, prep) = match self.kind {
            StatementKind::Grant => ("GRANT", "TO"),
            StatementKind::Revoke => ("REVOKE", "FROM"),
        };
        let privs: Vec<&str> = self.privileges.iter().map(|p| p.as_str()).collect();
        write!(f, "{verb} {} ON {} {prep} {}", privs.join(", "), self.scope, self.principal)?;
        if let Some(pw) = &self.password {
            write!(f, " IDENTIFIED BY '{pw}'")?;
        }
        Ok(())
    }
}

type Triple = (Principal, Privilege, Scope);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GrantTable {
    grants: BTreeSet<Triple>,
    shadows: BTreeSet<Triple>,
    passwords: BTreeMap<Principal, String>,
}

impl GrantTable {
    pub fn new() -> Self {
        GrantTable::default()
    }

    /// Apply a statement. Returns warnings for revokes that changed nothing.
    pub fn apply(&mut self, stmt: &Statement) -> Vec<String> {
        if let Some(pw) = &stmt.password {
            self.passwords.insert(stmt.principal.clone(), pw.clone());
        }
        let mut warnings = Vec::new();
        for &p in &stmt.privileges {
            let triple = (stmt.principal.clone(), p, stmt.scope.clone());
            match stmt.kind {
                StatementKind::Grant => {
                    if !self.shadows.remove(&triple) {
                        self.grants.insert(triple);
                    }
                }
                StatementKind::Revoke => {
                    if self.grants.remove(&triple) {
                        self.prune_shadows(&stmt.principal, p);
                    } else if !self.shadows.contains(&triple) && self.covering_grant(&stmt.principal, p, &stmt.scope) {
                        self.shadows.insert(triple);
                    } else {
                        warnings.push(format!("{} holds no {p} on {}", stmt.principal, stmt.scope));
                    }
                }
            }
        }
        warnings
    }

    fn covering_grant(&self, who: &Principal, p: Privilege, scope: &Scope) -> bool {
        self.grants.iter().any(|(w, q, s)| w == who && *q == p && s.covers(scope) && s != scope)
    }

    /// Drop shadows no longer under any grant.
    fn prune_shadows(&mut self, who: &Principal, p: Privilege) {
        let orphaned: Vec<Triple> = self
            .shadows
            .iter()
            .filter(|(w, q, s)| w == who && *q == p && !self.covering_grant(who, p, s))
            .cloned()
            .collect();
        for t in orphaned {
            self.shadows.remove(&t);
        }
    }

    /// The most specific grant or shadow covering `object` decides.
    pub fn check(&self, who: &Principal, privilege: Privilege, object: &Scope) -> bool {
        let best = |set: &BTreeSet<Triple>| {
            set.iter()
                .filter(|(w, q, s)| w == who && *q == privilege && s.covers(object))
                .map(|(_, _, s)| s.specificity())
                .max()
        };
        match (best(&self.grants), best(&self.shadows)) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(g), Some(s)) => g > s,
        }
    }

    pub fn password(&self, who: &Principal) -> Option<&str> {
        self.passwords.get(who).map(String::as_str)
    }

    pub fn grants(&self) -> impl Iterator<Item = &Triple> {
        self.grants.iter()
    }

    pub fn shadows(&self) -> impl Iterator<Item = &Triple> {
        self.shadows.iter()
    }

    /// `SHOW GRANTS`-like listing, one triple per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, p, s) in &self.grants {
            let _ = writeln!(out, "GRANT {p} ON {s} TO {w}");
        }
        for (w, p, s) in &self.shadows {
            let _ = writeln!(out, "REVOKE {p} ON {s} FROM {w}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentRecord {
    pub id: String,
    pub password_md5: String,
    pub attendance: u8,
}

/// Student records keyed by id, persisted as `id<TAB>md5(password)<TAB>attendance`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttendanceStore {
    records: BTreeMap<String, StudentRecord>,
    pub available: bool,
}

impl Default for AttendanceStore {
    fn default() -> Self {
        AttendanceStore { records: BTreeMap::new(), available: true }
    }
}

impl AttendanceStore {
    pub fn insert(&mut self, id: &str, password: &str, attendance: u8) -> Result<(), AclError> {
        let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        if !digits(id) || !digits(password) {
            return Err(AclError::Store("id and password must be digits".into()));
        }
        if attendance > 100 {
            return Err(AclError::Store(format!("attendance {attendance} out of range")));
        }
        let record = StudentRecord { id: id.to_string(), password_md5: md5_hex(password.as_bytes()), attendance };
        self.records.insert(id.to_string(), record);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&StudentRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Exact id and password match.
    pub fn verify(&self, id: &str, password: &str) -> Result<bool, AclError> {
        if !self.available {
            return Err(AclError::Store("unavailable".into()));
        }
        Ok(self.records.get(id).is_some_and(|r| r.password_md5 == md5_hex(password.as_bytes())))
    }

    pub fn load(text: &str) -> Result<AttendanceStore, AclError> {
        let mut store = AttendanceStore::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
            let bad = || AclError::Store(format!("line {}: expected id, md5, attendance", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, md5, att] = cols[..] else { return Err(bad()) };
            let attendance: u8 = att.trim().parse().map_err(|_| bad())?;
            if attendance > 100 || md5.len() != 32 {
                return Err(bad());
            }
            store.records.insert(id.to_string(), StudentRecord { id: id.to_string(), password_md5: md5.to_string(), attendance });
        }
        Ok(store)
    }

    pub fn to_text(&self) -> String {
        self.records.values().map(|r| format!("{}\t{}\t{}\n", r.id, r.password_md5, r.attendance)).collect()
    }
}

/// SELECT attendance for one student, gated by the grant table.
pub fn query_attendance(who: &Principal, id: &str, store: &AttendanceStore, grants: &GrantTable) -> Result<u8, AclError> {
    let object = Scope::table(ATTENDANCE_DB, ATTENDANCE_TABLE);
    if !grants.check(who, Privilege::Select, &object) {
        return Err(AclError::Unauthorized { principal: who.clone(), privilege: Privilege::Select, object });
    }
    if !store.available {
        return Err(AclError::Store("unavailable".into()));
    }
    store.get(id).map(|r| r.attendance).ok_or_else(|| AclError::NoSuchStudent(id.to_string()))
}

/// The statement that provisions the IVR account.
pub fn ivr_grant() -> Statement {
    Statement {
        kind: StatementKind::Grant,
        privileges: vec![Privilege::Select],
        scope: Scope::table(ATTENDANCE_DB, ATTENDANCE_TABLE),
        principal: Principal::ivr(),
        password: None,
    }
}
