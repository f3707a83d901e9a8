//! Notification sink standing in for the mail server.
//!
//! Nothing is delivered over the wire. The sink keeps an ordered, append-only
//! record and can render it as a journal of RFC 822-flavoured blocks.

use std::fmt;
use std::str::FromStr;

use crate::SimTime;

pub const SMTP_PORT: u16 = 25;
pub const POP3_PORT: u16 = 110;
/// SMTP over SSL. The conventional port is 465; the deployment this models
/// lists 225, and that value is kept.
pub const SSMTP_PORT: u16 = 225;
pub const POP3S_PORT: u16 = 995;

pub const ADMIN_ADDRESS: &str = "root@localhost";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    AdminAlert,
    VoicemailNotice,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::AdminAlert => "admin-alert",
            Category::VoicemailNotice => "voicemail-notice",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "admin-alert" => Ok(Category::AdminAlert),
            "voicemail-notice" => Ok(Category::VoicemailNotice),
            _ => Err(format!("unknown category {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub to: String,
    pub subject: String,
    pub body: String,
    pub at: SimTime,
    pub category: Category,
}

impl Notification {
    pub fn admin(subject: impl Into<String>, body: impl Into<String>, at: SimTime) -> Self {
        Notification { to: ADMIN_ADDRESS.to_string(), subject: subject.into(), body: body.into(), at, category: Category::AdminAlert }
    }

    fn render(&self, receipt: Receipt) -> String {
        let mut block = format!(
            "To: {}\nSubject: {}\nDate: {}\nX-Category: {}\nX-Receipt: {}\n\n",
            self.to,
            self.subject,
            self.at.to_rfc2822(),
            self.category,
            receipt.0
        );
        for line in self.body.lines() {
            block.push_str(line);
            block.push('\n');
        }
        block.push('\n');
        block
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Receipt(pub u64);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filter<'a> {
    pub category: Option<Category>,
    pub to: Option<&'a str>,
}

impl Filter<'_> {
    fn admits(&self, n: &Notification) -> bool {
        self.category.is_none_or(|c| c == n.category) && self.to.is_none_or(|t| t == n.to)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sink {
    entries: Vec<(Receipt, Notification)>,
}

impl Sink {
    pub fn new() -> Self {
        Sink::default()
    }

    /// Record a notification. Receipts start at 1 and strictly increase.
    ///
    /// # Panics
    /// If `to` is empty or `at` precedes the previous entry.
    pub fn send(&mut self, n: Notification) -> Receipt {
        assert!(!n.to.is_empty(), "notification without recipient");
        if let Some((_, last)) = self.entries.last() {
            assert!(n.at >= last.at, "notification time went backwards");
        }
        let receipt = Receipt(self.entries.len() as u64 + 1);
        self.entries.push((receipt, n));
        receipt
    }

    /// Matching notifications in send order. The sink is not emptied.
    pub fn drain(&self, filter: &Filter<'_>) -> Vec<&Notification> {
        self.entries.iter().map(|(_, n)| n).filter(|n| filter.admits(n)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|(_, n)| n.category == category).count()
    }

    pub fn journal(&self) -> String {
        self.entries.iter().map(|(r, n)| n.render(*r)).collect()
    }
}

/// One block read back from a journal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JournalEntry {
    pub receipt: u64,
    pub to: String,
    pub subject: String,
    pub date: String,
    pub category: Category,
    pub body: String,
}

/// Parse the output of [`Sink::journal`]. A block starts at a `To:` line
/// that follows a blank line or the start of the text.
pub fn parse_journal(text: &str) -> Result<Vec<JournalEntry>, String> {
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> =
        (0..lines.len()).filter(|&i| lines[i].starts_with("To: ") && (i == 0 || lines[i - 1].is_empty())).collect();
    let mut out = Vec::new();
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(lines.len());
        let block = &lines[start..end];
        let blank = block.iter().position(|l| l.is_empty()).ok_or_else(|| format!("line {}: block has no body", start + 1))?;
        let header = |name: &str| {
            block[..blank]
                .iter()
                .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix(": ")))
                .map(str::to_string)
                .ok_or_else(|| format!("line {}: missing {name}", start + 1))
        };
        let mut body: Vec<&str> = block[blank + 1..].to_vec();
        if body.last() == Some(&"") {
            body.pop();
        }
        out.push(JournalEntry {
            receipt: header("X-Receipt")?.parse().map_err(|_| format!("line {}: bad receipt", start + 1))?,
            to: header("To")?,
            subject: header("Subject")?,
            date: header("Date")?,
            category: header("X-Category")?.parse()?,
            body: body.join("\n"),
        });
    }
    Ok(out)
}
