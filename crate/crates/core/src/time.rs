//! Virtual time used by every stateful component.
//!
//! Nothing in the core reads the wall clock. Timestamps are microseconds since
//! the start of a run, which keeps rate windows and timeouts reproducible.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use chrono::DateTime;

/// A point in virtual time, microsecond resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    /// Parse a non-negative decimal seconds value ("12", "0.5", "1.000250").
    pub fn parse_secs(text: &str) -> Option<Self> {
        let text = text.trim();
        let (whole, frac) = match text.split_once('.') {
            Some((w, f)) => (w, f),
            None => (text, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return None;
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        if frac.len() > 6 {
            return None;
        }
        let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let mut frac_us: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        for _ in frac.len()..6 {
            frac_us *= 10;
        }
        whole.checked_mul(1_000_000)?.checked_add(frac_us).map(SimTime)
    }

    pub fn saturating_sub(self, d: Duration) -> SimTime {
        SimTime(self.0.saturating_sub(d.as_micros() as u64))
    }

    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_micros(self.0.saturating_sub(earlier.0))
    }

    /// ISO-8601 rendering with the run start pinned to the Unix epoch.
    pub fn to_iso8601(self) -> String {
        self.datetime().format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string()
    }

    /// RFC 2822 rendering, used for mail journal `Date:` headers.
    pub fn to_rfc2822(self) -> String {
        self.datetime().to_rfc2822()
    }

    fn datetime(self) -> DateTime<chrono::Utc> {
        DateTime::from_timestamp_micros(self.0 as i64).unwrap_or_default()
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime(self.0 + rhs.as_micros() as u64)
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        self.since(rhs)
    }
}

/// Renders as seconds with six decimals, e.g. `59.000000`.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}
