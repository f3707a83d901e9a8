//! Rate-based intrusion detection with alert levels and active response.
//!
//! Every security event is classified into a level from 0 to 15. Levels 8
//! and up are actionable. Independently, a per-source sliding window counts
//! events; once a source strictly exceeds the threshold inside the window it
//! is blacklisted by inserting a `DROP` rule for it at the head of the chain,
//! and the administrator is notified.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;
use std::time::Duration;

use crate::notify::{Notification, Sink};
use crate::pktfilter::{Chain, ChainOp, FilterRule, Proto, RuleMatcher, Verdict};
use crate::SimTime;

pub const MAX_LEVEL: u8 = 15;
pub const ACTIONABLE_LEVEL: u8 = 8;

/// What each level means.
pub const LEVEL_MEANINGS: [&str; 16] = [
    "ignored",
    "no action",
    "system notification",
    "successful event",
    "bad configuration",
    "user error or missed password",
    "low relevance attack",
    "bad word match",
    "first time seen",
    "invalid source or unknown user",
    "multiple bad passwords",
    "integrity check warning",
    "high importance event",
    "unusual error",
    "high importance security event",
    "severe attack",
];

pub mod rule_ids {
    pub const REGISTER: u32 = 1001;
    pub const AUTH_FAILURE: u32 = 1002;
    pub const UNKNOWN_USER: u32 = 1003;
    pub const PORT_PROBE: u32 = 1004;
    pub const CONFIG_ERROR: u32 = 1005;
    pub const INTEGRITY: u32 = 1006;
    pub const GENERIC: u32 = 1007;
    pub const IGNORED: u32 = 1000;
    pub const RATE_EXCEEDED: u32 = 1010;
    pub const SEVERE_FLOOD: u32 = 1015;
    pub const DUPLICATE_BLACKLIST: u32 = 1020;
    pub const UNBLOCK: u32 = 1021;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    AuthFailure,
    UnknownUser,
    RegisterAttempt,
    PortProbe,
    ConfigError,
    IntegrityWarning,
    Generic,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::AuthFailure,
        EventKind::UnknownUser,
        EventKind::RegisterAttempt,
        EventKind::PortProbe,
        EventKind::ConfigError,
        EventKind::IntegrityWarning,
        EventKind::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::AuthFailure => "auth-failure",
            EventKind::UnknownUser => "unknown-user",
            EventKind::RegisterAttempt => "register-attempt",
            EventKind::PortProbe => "port-probe",
            EventKind::ConfigError => "config-error",
            EventKind::IntegrityWarning => "integrity-warning",
            EventKind::Generic => "generic",
        }
    }

    fn rule_id(self) -> u32 {
        match self {
            EventKind::AuthFailure => rule_ids::AUTH_FAILURE,
            EventKind::UnknownUser => rule_ids::UNKNOWN_USER,
            EventKind::RegisterAttempt => rule_ids::REGISTER,
            EventKind::PortProbe => rule_ids::PORT_PROBE,
            EventKind::ConfigError => rule_ids::CONFIG_ERROR,
            EventKind::IntegrityWarning => rule_ids::INTEGRITY,
            EventKind::Generic => rule_ids::GENERIC,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityEvent {
    pub kind: EventKind,
    pub src: Ipv4Addr,
    pub at: SimTime,
    pub detail: String,
    /// Keepalives and similar noise: level 0, never counted.
    pub ignorable: bool,
}

impl SecurityEvent {
    pub fn new(kind: EventKind, src: Ipv4Addr, at: SimTime, detail: impl Into<String>) -> Self {
        SecurityEvent { kind, src, at, detail: detail.into(), ignorable: false }
    }

    pub fn ignorable(src: Ipv4Addr, at: SimTime, detail: impl Into<String>) -> Self {
        SecurityEvent { ignorable: true, ..SecurityEvent::new(EventKind::Generic, src, at, detail) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alert {
    pub level: u8,
    pub src: Ipv4Addr,
    pub at: SimTime,
    pub rule_id: u32,
    pub description: String,
}

impl Alert {
    pub fn is_actionable(&self) -> bool {
        self.level >= ACTIONABLE_LEVEL
    }

    /// One alert-log line: time, level, src, rule id, description, tab separated.
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.at, self.level, self.src, self.rule_id, self.description)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateRule {
    pub threshold: u32,
    pub window: Duration,
    /// Window counts above `threshold * severe_multiplier` classify as level 15.
    pub severe_multiplier: u32,
}

impl Default for RateRule {
    fn default() -> Self {
        RateRule { threshold: 10, window: Duration::from_secs(60), severe_multiplier: 5 }
    }
}

impl RateRule {
    pub fn new(threshold: u32, window: Duration) -> Option<Self> {
        (threshold >= 1 && !window.is_zero()).then_some(RateRule { threshold, window, ..RateRule::default() })
    }
}

/// Base level per event kind. Configurable; every kind has exactly one entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMap {
    levels: BTreeMap<EventKind, u8>,
}

impl Default for LevelMap {
    fn default() -> Self {
        let levels = [
            (EventKind::AuthFailure, 5),
            (EventKind::UnknownUser, 9),
            (EventKind::RegisterAttempt, 3),
            (EventKind::PortProbe, 8),
            (EventKind::ConfigError, 4),
            (EventKind::IntegrityWarning, 11),
            (EventKind::Generic, 2),
        ];
        LevelMap { levels: levels.into_iter().collect() }
    }
}

impl LevelMap {
    pub fn base(&self, kind: EventKind) -> u8 {
        self.levels[&kind]
    }

    pub fn set(&mut self, kind: EventKind, level: u8) {
        self.levels.insert(kind, level.min(MAX_LEVEL));
    }
}

/// Classify an event given how many counted events (including this one) its
/// source has inside the current window.
pub fn classify_with_count(event: &SecurityEvent, window_count: u32, map: &LevelMap, rule: &RateRule) -> Alert {
    let (level, rule_id, description) = if event.ignorable {
        (0, rule_ids::IGNORED, format!("ignored: {}", event.detail))
    } else if window_count > rule.threshold.saturating_mul(rule.severe_multiplier) {
        (MAX_LEVEL, rule_ids::SEVERE_FLOOD, format!("severe flood ({window_count} in window): {}", event.detail))
    } else if window_count > rule.threshold {
        let level = map.base(event.kind).max(10);
        (level, rule_ids::RATE_EXCEEDED, format!("{} burst ({window_count} in window): {}", event.kind, event.detail))
    } else {
        (map.base(event.kind), event.kind.rule_id(), format!("{}: {}", event.kind, event.detail))
    };
    Alert { level, src: event.src, at: event.at, rule_id, description }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseCommand {
    Blacklist { src: Ipv4Addr, level: u8, rule_id: u32, reason: String },
}

/// Per-source sliding window with episode arming.
#[derive(Debug, Clone, Default)]
struct SourceWindow {
    times: VecDeque<SimTime>,
    fired: bool,
}

/// Sliding-window rate detector on its own, usable without the rest of the
/// sentinel.
#[derive(Debug, Clone, Default)]
pub struct RateDetector {
    rule: RateRule,
    sources: BTreeMap<Ipv4Addr, SourceWindow>,
}

impl RateDetector {
    pub fn new(rule: RateRule) -> Self {
        RateDetector { rule, sources: BTreeMap::new() }
    }

    pub fn rule(&self) -> &RateRule {
        &self.rule
    }

    /// Record one event from `src` at `at`. Returns the number of events from
    /// `src` inside the window ending at `at`, and whether this event opens a
    /// new offense (count strictly above threshold, first time since the
    /// window last emptied).
    pub fn record(&mut self, src: Ipv4Addr, at: SimTime) -> (u32, bool) {
        let window = self.rule.window;
        let w = self.sources.entry(src).or_default();
        while w.times.front().is_some_and(|&t| at.since(t) >= window) {
            w.times.pop_front();
        }
        if w.times.is_empty() {
            w.fired = false;
        }
        w.times.push_back(at);
        let count = w.times.len() as u32;
        let fire = count > self.rule.threshold && !w.fired;
        if fire {
            w.fired = true;
        }
        (count, fire)
    }

    /// Count for `src` as if an event arrived at `at`, without recording it.
    pub fn peek(&self, src: Ipv4Addr, at: SimTime) -> u32 {
        self.sources
            .get(&src)
            .map_or(0, |w| w.times.iter().filter(|&&t| at.since(t) < self.rule.window).count() as u32)
            + 1
    }

    pub fn forget(&mut self, src: Ipv4Addr) {
        self.sources.remove(&src);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlacklistEntry {
    pub since: SimTime,
    pub reason: String,
    pub level: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blacklist {
    pub entries: BTreeMap<Ipv4Addr, BlacklistEntry>,
}

impl Blacklist {
    pub fn contains(&self, src: Ipv4Addr) -> bool {
        self.entries.contains_key(&src)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated dump: src, since, level, reason.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(src, e)| format!("{src}\t{}\t{}\t{}\n", e.since, e.level, e.reason)).collect()
    }

    /// Read back the output of [`Blacklist::to_text`].
    pub fn from_text(text: &str) -> Result<Blacklist, String> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || format!("line {}: expected src, since, level, reason", i + 1);
            let mut cols = line.splitn(4, '\t');
            let src: Ipv4Addr = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
            let since = cols.next().and_then(SimTime::parse_secs).ok_or_else(bad)?;
            let level: u8 = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
            let reason = cols.next().unwrap_or("").to_string();
            entries.insert(src, BlacklistEntry { since, reason, level });
        }
        Ok(Blacklist { entries })
    }

    /// Entry set equals the set of sources that have a blanket DROP rule.
    pub fn coherent_with(&self, chain: &Chain) -> bool {
        let mut dropped: Vec<Ipv4Addr> = chain
            .rules
            .iter()
            .filter(|r| r.verdict == Verdict::Drop && r.proto == Proto::Any && r.dport.is_none())
            .filter_map(|r| r.src)
            .collect();
        dropped.sort();
        dropped.dedup();
        dropped.iter().eq(self.entries.keys())
    }
}

#[derive(Debug, Clone)]
pub struct SentinelConfig {
    pub rate: RateRule,
    pub levels: LevelMap,
    /// Blacklist on any actionable alert, not only on rate offenses.
    pub auto_response: bool,
    /// Minimum level written to the alert log.
    pub log_level: u8,
}

impl Default for SentinelConfig {
    fn default() -> Self {
        SentinelConfig { rate: RateRule::default(), levels: LevelMap::default(), auto_response: false, log_level: ACTIONABLE_LEVEL }
    }
}

#[derive(Debug, Clone)]
pub struct Sentinel {
    config: SentinelConfig,
    detector: RateDetector,
    pub blacklist: Blacklist,
    alerts: Vec<Alert>,
    last_at: SimTime,
}

impl Sentinel {
    pub fn new(config: SentinelConfig) -> Self {
        let detector = RateDetector::new(config.rate);
        Sentinel { config, detector, blacklist: Blacklist::default(), alerts: Vec::new(), last_at: SimTime::ZERO }
    }

    pub fn config(&self) -> &SentinelConfig {
        &self.config
    }

    /// Classification against the current window state, without recording.
    pub fn classify(&self, event: &SecurityEvent) -> Alert {
        let count = if event.ignorable { 0 } else { self.detector.peek(event.src, event.at) };
        classify_with_count(event, count, &self.config.levels, &self.config.rate)
    }

    /// Ingest an event: record it in the window, classify it and decide on a
    /// response.
    ///
    /// # Panics
    /// If events arrive out of time order.
    pub fn observe(&mut self, event: &SecurityEvent) -> Option<ResponseCommand> {
        assert!(event.at >= self.last_at, "security events must arrive in time order");
        self.last_at = event.at;
        if event.ignorable {
            self.alerts.push(classify_with_count(event, 0, &self.config.levels, &self.config.rate));
            return None;
        }
        let (count, offense) = self.detector.record(event.src, event.at);
        let alert = classify_with_count(event, count, &self.config.levels, &self.config.rate);
        let auto = self.config.auto_response && alert.is_actionable() && !self.blacklist.contains(event.src);
        let cmd = (offense || auto).then(|| ResponseCommand::Blacklist {
            src: event.src,
            level: alert.level,
            rule_id: alert.rule_id,
            reason: alert.description.clone(),
        });
        self.alerts.push(alert);
        cmd
    }

    /// Carry out a response command: head DROP rule, blacklist entry, admin
    /// mail. Repeating it for a listed source only logs a level-1 alert.
    /// Returns whether anything changed.
    pub fn active_response(&mut self, cmd: &ResponseCommand, chain: &mut Chain, sink: &mut Sink, now: SimTime) -> bool {
        let ResponseCommand::Blacklist { src, level, rule_id, reason } = cmd;
        if self.blacklist.contains(*src) {
            self.push_info(1, *src, now, rule_ids::DUPLICATE_BLACKLIST, format!("{src} already blacklisted"));
            return false;
        }
        chain.mutate(ChainOp::InsertHead(FilterRule::drop_source(*src)));
        self.blacklist.entries.insert(*src, BlacklistEntry { since: now, reason: reason.clone(), level: *level });
        sink.send(Notification::admin(
            format!("[sentinel] blacklisted {src} (level {level}, rule {rule_id})"),
            format!("Source: {src}\nLevel: {level}\nRule: {rule_id}\nReason: {reason}\nAction: firewall-drop"),
            now,
        ));
        true
    }

    /// Remove a source from the blacklist and its DROP rules from the chain.
    pub fn unblock(&mut self, src: Ipv4Addr, chain: &mut Chain, now: SimTime) -> bool {
        if self.blacklist.entries.remove(&src).is_none() {
            return false;
        }
        chain.mutate(ChainOp::DeleteMatching(RuleMatcher::exact(&FilterRule::drop_source(src))));
        self.detector.forget(src);
        self.push_info(2, src, now, rule_ids::UNBLOCK, format!("{src} removed from blacklist"));
        true
    }

    fn push_info(&mut self, level: u8, src: Ipv4Addr, at: SimTime, rule_id: u32, description: String) {
        self.alerts.push(Alert { level, src, at, rule_id, description });
    }

    /// Every alert produced, at any level.
    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    /// Alerts at or above the configured log level.
    pub fn logged_alerts(&self) -> impl Iterator<Item = &Alert> {
        self.alerts.iter().filter(|a| a.level >= self.config.log_level)
    }

    pub fn alert_log(&self) -> String {
        self.logged_alerts().map(|a| a.log_line() + "\n").collect()
    }

    pub fn alerts_by_level(&self) -> [u64; 16] {
        let mut out = [0; 16];
        for a in &self.alerts {
            out[a.level as usize] += 1;
        }
        out
    }
}
