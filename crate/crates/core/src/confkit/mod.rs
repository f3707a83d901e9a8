//! Parsers for the five configuration dialects and the cross-file validator.
//!
//! All parsers are pure: they take the file contents as text and return typed
//! documents. Lines beginning with `;` or `#` are comments in every dialect and
//! carriage returns are stripped before anything else looks at a line.

mod extensions;
mod sip;
mod validate;
mod voicemail;
mod vpn;

use std::fmt;

pub use extensions::{parse_extensions_conf, DialplanContext, DialplanDoc, ExtenLine, OperationCall, OperationKind};
pub use sip::{parse_sip_conf, write_sip_conf, PeerEntry, PeerHost, PeerType};
pub use validate::{validate_cross, Finding, Severity, ValidationReport};
pub use voicemail::{parse_voicemail_conf, MailboxEntry, VoicemailConf};
pub use vpn::{parse_chap_secrets, parse_pptpd_conf, parse_vpn_config, Credential, CredentialTable, TunnelConfig};

/// Which configuration file a parse error or finding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConfFile {
    Sip,
    Extensions,
    Voicemail,
    Pptpd,
    ChapSecrets,
}

impl fmt::Display for ConfFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfFile::Sip => "sip.conf",
            ConfFile::Extensions => "extensions.conf",
            ConfFile::Voicemail => "voicemail.conf",
            ConfFile::Pptpd => "pptpd.conf",
            ConfFile::ChapSecrets => "chap-secrets",
        })
    }
}

/// A parse failure. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{file}:{line}: {message}")]
pub struct ParseError {
    pub file: ConfFile,
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(file: ConfFile, line: usize, message: impl Into<String>) -> Self {
        ParseError { file, line: line.max(1), message: message.into() }
    }
}

/// A reference of the form `number@context`, used by peer `mailbox=` keys and
/// by `VoiceMailMain()` arguments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MailboxRef {
    pub mailbox: String,
    pub context: String,
}

impl MailboxRef {
    pub fn parse(text: &str) -> Option<MailboxRef> {
        let (mailbox, context) = text.trim().split_once('@')?;
        let (mailbox, context) = (mailbox.trim(), context.trim());
        if !is_digits(mailbox) || !is_identifier(context) {
            return None;
        }
        Some(MailboxRef { mailbox: mailbox.to_string(), context: context.to_string() })
    }
}

impl fmt::Display for MailboxRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.mailbox, self.context)
    }
}

pub(crate) fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

/// Iterate `(line_number, content)` pairs with CR stripped, surrounding
/// whitespace trimmed and whole-line comments removed. Inline `;` comments are
/// cut when `inline_semicolon` is set, except inside parentheses.
pub(crate) fn logical_lines(text: &str, inline_semicolon: bool) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n').enumerate().filter_map(move |(idx, raw)| {
        let raw = raw.trim_end_matches('\r');
        let mut line = raw.trim();
        if line.starts_with(';') || line.starts_with('#') {
            return None;
        }
        if inline_semicolon {
            let mut depth = 0i32;
            for (pos, ch) in line.char_indices() {
                match ch {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    ';' if depth <= 0 => {
                        line = line[..pos].trim_end();
                        break;
                    }
                    _ => {}
                }
            }
        }
        if line.is_empty() {
            None
        } else {
            Some((idx + 1, line))
        }
    })
}

/// Recognize a `[name]` section header.
pub(crate) fn section_header(line: &str) -> Option<Result<&str, ()>> {
    let inner = line.strip_prefix('[')?;
    match inner.strip_suffix(']') {
        Some(name) if is_identifier(name.trim()) => Some(Ok(name.trim())),
        _ => Some(Err(())),
    }
}
