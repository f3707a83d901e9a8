use std::collections::BTreeSet;
use std::fmt;

use super::{ConfFile, DialplanDoc, MailboxRef, OperationKind, PeerEntry, VoicemailConf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub severity: Severity,
    pub file: ConfFile,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {} {}: {}", self.file, self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    /// True when no finding has error severity.
    pub fn ok(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }
}

/// Check the references between sip.conf, extensions.conf and voicemail.conf.
///
/// Every dial-plan context must be owned by some peer or mailbox context;
/// `VoiceMailMain` targets and peer `mailbox=` references must resolve.
/// Unknown application names are warnings.
pub fn validate_cross(peers: &[PeerEntry], dialplan: &DialplanDoc, mailboxes: &VoicemailConf) -> ValidationReport {
    let known_contexts: BTreeSet<&str> = peers
        .iter()
        .map(|p| p.context.as_str())
        .chain(mailboxes.contexts.keys().map(String::as_str))
        .collect();
    let mut report = ValidationReport::default();
    let mut push = |severity, file, location: String, message: String| {
        report.findings.push(Finding { severity, file, location, message })
    };

    for ctx in &dialplan.contexts {
        if !known_contexts.contains(ctx.name.as_str()) {
            push(
                Severity::Error,
                ConfFile::Extensions,
                format!("[{}]", ctx.name),
                format!("context {} unmatched in sip.conf and voicemail.conf", ctx.name),
            );
        }
        for line in &ctx.lines {
            let location = format!("[{}] {},{}", ctx.name, line.exten, line.priority);
            match line.op.kind() {
                None => push(
                    Severity::Warning,
                    ConfFile::Extensions,
                    location,
                    format!("unknown operation {}", line.op.name),
                ),
                Some(OperationKind::VoiceMailMain) => match MailboxRef::parse(&line.op.args) {
                    Some(target) if mailboxes.lookup(&target).is_some() => {}
                    Some(target) => push(
                        Severity::Error,
                        ConfFile::Extensions,
                        location,
                        format!("VoiceMailMain target {target} not found in voicemail.conf"),
                    ),
                    None => push(
                        Severity::Error,
                        ConfFile::Extensions,
                        location,
                        format!("VoiceMailMain argument {:?} is not box@context", line.op.args),
                    ),
                },
                Some(_) => {}
            }
        }
    }

    for peer in peers {
        if let Some(mb) = &peer.mailbox {
            if mailboxes.lookup(mb).is_none() {
                push(
                    Severity::Error,
                    ConfFile::Sip,
                    format!("[{}]", peer.name),
                    format!("mailbox {mb} not found in voicemail.conf"),
                );
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confkit::{parse_extensions_conf, parse_sip_conf, parse_voicemail_conf};

    fn fixtures(sip: &str, ext: &str, vm: &str) -> ValidationReport {
        validate_cross(
            &parse_sip_conf(sip).unwrap(),
            &parse_extensions_conf(ext).unwrap(),
            &parse_voicemail_conf(vm).unwrap(),
        )
    }

    #[test]
    fn exact_context_match_is_ok() {
        let r = fixtures("[harish]\ncontext=office", "[office]\nexten => 111,1,Hangup()", "");
        assert!(r.ok(), "{:?}", r.findings);
        assert!(r.findings.is_empty());
    }

    #[test]
    fn unmatched_context() {
        let r = fixtures("[harish]\ncontext=office", "[office]\n[sales]\nexten => 1,1,Hangup()", "");
        assert!(!r.ok());
        let errors: Vec<_> = r.errors().collect();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].message.contains("context sales unmatched"));
    }

    #[test]
    fn mailbox_context_counts_as_owner() {
        let r = fixtures(
            "[harish]\ncontext=office",
            "[vmail]\nexten => 444, 1, VoiceMailMain(756@vmail)",
            "[vmail]\n756 => 1234, username, username@domain.com",
        );
        assert!(r.ok(), "{:?}", r.findings);
    }

    #[test]
    fn dangling_voicemail_target() {
        let r = fixtures(
            "[harish]\ncontext=office",
            "[office]\nexten => 444,1,VoiceMailMain(999@vmail)",
            "[vmail]\n756 => 1234, username, username@domain.com",
        );
        assert!(!r.ok());
        assert!(r.errors().any(|f| f.message.contains("999@vmail")));
    }

    #[test]
    fn dangling_peer_mailbox_and_unknown_op_warning() {
        let r = fixtures("[harish]\ncontext=office\nmailbox=1@vmail", "[office]\nexten => 1,1,Answer()", "[vmail]");
        assert_eq!(r.errors().count(), 1);
        assert_eq!(r.warnings().count(), 1);
        let r = fixtures("[harish]\ncontext=office", "[office]\nexten => 1,1,Answer()", "");
        assert!(r.ok());
    }
}
