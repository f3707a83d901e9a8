use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Named run counters, reported sorted by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunMetrics {
    counters: BTreeMap<String, u64>,
}

impl RunMetrics {
    pub fn incr(&mut self, name: &str) {
        self.add(name, 1);
    }

    pub fn add(&mut self, name: &str, n: u64) {
        *self.counters.entry(name.to_string()).or_default() += n;
    }

    pub fn set(&mut self, name: &str, value: u64) {
        self.counters.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counters.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// `name value` lines.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.counters {
            let _ = writeln!(out, "{k} {v}");
        }
        out
    }
}

/// Every counter the pipeline maintains, so reports always list them.
pub const COUNTERS: &[&str] = &[
    "packets_ingested",
    "packets_accepted",
    "packets_dropped",
    "packets_rejected",
    "tunnel_frames",
    "tunnel_failures",
    "sip_delivered",
    "sip_malformed",
    "registrations_ok",
    "registrations_failed",
    "calls_started",
    "calls_completed",
    "calls_no_answer",
    "calls_refused",
    "voicemail_deposits",
    "voicemail_logins_failed",
    "ivr_queries",
    "rtp_frames",
    "rtp_discontinuities",
    "delivered_while_blacklisted",
];
