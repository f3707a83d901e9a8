use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{is_digits, logical_lines, section_header, ConfFile, MailboxRef, ParseError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MailboxEntry {
    pub mailbox: String,
    pub password: String,
    pub display_name: String,
    pub email: String,
    /// Trailing fields (pager address, options) kept as written.
    pub extras: Vec<String>,
}

/// voicemail.conf grouped by context. `[general]` and `[zonemessages]` carry
/// settings rather than mailboxes and are skipped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoicemailConf {
    pub contexts: BTreeMap<String, Vec<MailboxEntry>>,
}

impl VoicemailConf {
    pub fn lookup(&self, r: &MailboxRef) -> Option<&MailboxEntry> {
        self.contexts.get(&r.context)?.iter().find(|m| m.mailbox == r.mailbox)
    }

    pub fn has_context(&self, name: &str) -> bool {
        self.contexts.contains_key(name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (ctx, boxes) in &self.contexts {
            let _ = writeln!(out, "[{ctx}]");
            for m in boxes {
                let _ = write!(out, "{} => {},{},{}", m.mailbox, m.password, m.display_name, m.email);
                for e in &m.extras {
                    let _ = write!(out, ",{e}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

const SETTINGS_SECTIONS: [&str; 2] = ["general", "zonemessages"];

pub fn parse_voicemail_conf(text: &str) -> Result<VoicemailConf, ParseError> {
    let err = |line, msg: String| ParseError::new(ConfFile::Voicemail, line, msg);
    let mut conf = VoicemailConf::default();
    let mut current: Option<Option<String>> = None;

    for (lineno, line) in logical_lines(text, true) {
        if let Some(header) = section_header(line) {
            let name = header.map_err(|_| err(lineno, format!("malformed context header {line:?}")))?;
            if SETTINGS_SECTIONS.iter().any(|s| s.eq_ignore_ascii_case(name)) {
                current = Some(None);
                continue;
            }
            if conf.contexts.contains_key(name) {
                return Err(err(lineno, format!("duplicate context {name}")));
            }
            conf.contexts.insert(name.to_string(), Vec::new());
            current = Some(Some(name.to_string()));
            continue;
        }
        let ctx = match &current {
            None => return Err(err(lineno, "mailbox line outside any context".to_string())),
            Some(None) => continue,
            Some(Some(ctx)) => ctx,
        };
        let (mailbox, rest) = line
            .split_once("=>")
            .ok_or_else(|| err(lineno, format!("expected `box => password, name, email`, found {line:?}")))?;
        let mailbox = mailbox.trim();
        if !is_digits(mailbox) {
            return Err(err(lineno, format!("mailbox must be digits, found {mailbox:?}")));
        }
        let fields: Vec<&str> = rest.split(',').map(str::trim).collect();
        let field = |idx: usize, what: &str| {
            fields
                .get(idx)
                .filter(|f| !f.is_empty())
                .map(|f| f.to_string())
                .ok_or_else(|| err(lineno, format!("missing {what} field")))
        };
        let password = field(0, "password")?;
        let display_name = field(1, "name")?;
        let email = field(2, "email")?;
        if !is_digits(&password) {
            return Err(err(lineno, format!("mailbox password must be digits, found {password:?}")));
        }
        if email.matches('@').count() != 1 {
            return Err(err(lineno, format!("email must contain exactly one '@', found {email:?}")));
        }
        let boxes = conf.contexts.get_mut(ctx).expect("context inserted at header");
        if boxes.iter().any(|m| m.mailbox == mailbox) {
            return Err(err(lineno, format!("duplicate mailbox {mailbox} in context {ctx}")));
        }
        boxes.push(MailboxEntry {
            mailbox: mailbox.to_string(),
            password,
            display_name,
            email,
            extras: fields[3..].iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(conf)
}
