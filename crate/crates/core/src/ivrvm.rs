//! The attendance IVR and the voicemail store.
//!
//! The IVR takes a caller through student id, password, verification and
//! attendance readout, with a bad-password loop capped at [`RETRY_CAP`]
//! failures and a 1/2 "another student?" menu.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use crate::acl::{query_attendance, AclError, AttendanceStore, GrantTable, Principal};
use crate::confkit::{MailboxRef, VoicemailConf};
use crate::dialplan::Action;
use crate::notify::{Category, Notification, Receipt, Sink};
use crate::SimTime;

pub const RETRY_CAP: u32 = 3;
/// Query template name that hands a call to the IVR.
pub const ATTENDANCE_QUERY: &str = "attendance";

pub mod prompts {
    pub const WELCOME: &str = "welcome";
    pub const ENTER_ID: &str = "enter-id";
    pub const ENTER_PASSWORD: &str = "enter-password";
    pub const ATTENDANCE_IS: &str = "attendance-is";
    pub const BAD_PASSWORD: &str = "bad-password";
    pub const ANOTHER_STUDENT: &str = "another-student";
    pub const SERVICE_UNAVAILABLE: &str = "service-unavailable";
    pub const GOODBYE: &str = "goodbye";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Welcome,
    ReadId,
    ReadPw,
    Again,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IvrEvent {
    Start,
    Digits(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {event:?} does not fit phase {phase:?}")]
pub struct IvrError {
    pub phase: Phase,
    pub event: IvrEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IvrSession {
    pub phase: Phase,
    pub entered_id: String,
    pub entered_pw: String,
    pub retries: u32,
    pub retry_cap: u32,
    /// Verification outcomes, in order, for auditing.
    pub verifications: Vec<bool>,
}

impl Default for IvrSession {
    fn default() -> Self {
        IvrSession::with_cap(RETRY_CAP)
    }
}

impl IvrSession {
    pub fn with_cap(retry_cap: u32) -> Self {
        IvrSession { phase: Phase::Welcome, entered_id: String::new(), entered_pw: String::new(), retries: 0, retry_cap, verifications: Vec::new() }
    }
}

/// What the IVR needs from the datastore: the records and the grants the
/// IVR account holds.
#[derive(Debug, Clone, Copy)]
pub struct StoreGateway<'a> {
    pub store: &'a AttendanceStore,
    pub grants: &'a GrantTable,
    pub principal: &'a Principal,
}

/// Exact id and password match. An unavailable store is an error, not a
/// failed match.
pub fn authenticate(id: &str, pw: &str, gateway: &StoreGateway<'_>) -> Result<bool, AclError> {
    gateway.store.verify(id, pw)
}

fn read(register: &str, prompt: &str) -> Action {
    Action::Read { register: register.to_string(), prompt: prompt.to_string() }
}

fn play(token: &str) -> Action {
    Action::Play(token.to_string())
}

/// Advance the IVR by one event.
pub fn run_ivr(session: &IvrSession, event: IvrEvent, gateway: &StoreGateway<'_>) -> Result<(Vec<Action>, IvrSession), IvrError> {
    let mut s = session.clone();
    let unavailable = |mut s: IvrSession| {
        s.phase = Phase::Done;
        (vec![play(prompts::SERVICE_UNAVAILABLE), Action::Hangup], s)
    };
    let actions = match (s.phase, &event) {
        (Phase::Welcome, IvrEvent::Start) => {
            s.phase = Phase::ReadId;
            vec![play(prompts::WELCOME), read("id", prompts::ENTER_ID)]
        }
        (Phase::ReadId, IvrEvent::Digits(d)) => {
            s.entered_id = d.clone();
            s.phase = Phase::ReadPw;
            vec![read("pw", prompts::ENTER_PASSWORD)]
        }
        (Phase::ReadPw, IvrEvent::Digits(d)) => {
            s.entered_pw = d.clone();
            let ok = match authenticate(&s.entered_id, &s.entered_pw, gateway) {
                Ok(ok) => ok,
                Err(_) => return Ok(unavailable(s)),
            };
            s.verifications.push(ok);
            let value = if ok {
                match query_attendance(gateway.principal, &s.entered_id, gateway.store, gateway.grants) {
                    Ok(v) => Some(v),
                    Err(AclError::NoSuchStudent(_)) => None,
                    Err(_) => return Ok(unavailable(s)),
                }
            } else {
                None
            };
            match value {
                Some(v) => {
                    s.retries = 0;
                    s.phase = Phase::Again;
                    vec![
                        Action::Query(ATTENDANCE_QUERY.to_string()),
                        play(prompts::ATTENDANCE_IS),
                        Action::SayDigits(v.to_string()),
                        read("again", prompts::ANOTHER_STUDENT),
                    ]
                }
                None => {
                    s.retries += 1;
                    if s.retries >= s.retry_cap {
                        s.phase = Phase::Done;
                        vec![play(prompts::BAD_PASSWORD), Action::Hangup]
                    } else {
                        s.phase = Phase::ReadId;
                        vec![play(prompts::BAD_PASSWORD), read("id", prompts::ENTER_ID)]
                    }
                }
            }
        }
        (Phase::Again, IvrEvent::Digits(d)) => match d.as_str() {
            "1" => {
                s.phase = Phase::ReadId;
                vec![read("id", prompts::ENTER_ID)]
            }
            "2" => {
                s.phase = Phase::Done;
                vec![play(prompts::GOODBYE), Action::Hangup]
            }
            _ => vec![read("again", prompts::ANOTHER_STUDENT)],
        },
        (Phase::Done, _) => vec![Action::Hangup],
        _ => return Err(IvrError { phase: s.phase, event }),
    };
    Ok((actions, s))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoiceMessage {
    pub from: String,
    pub deposited_at: SimTime,
    pub payload_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoiceMailbox {
    pub mailbox: String,
    pub context: String,
    pub password: String,
    pub owner_email: String,
    pub messages: Vec<VoiceMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VoicemailError {
    #[error("no mailbox {0}")]
    UnknownBox(MailboxRef),
    #[error("wrong password for mailbox {0}")]
    WrongPassword(MailboxRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepositReceipt {
    pub index: usize,
    pub notification: Receipt,
}

#[derive(Debug, Clone, Default)]
pub struct MailboxStore {
    boxes: BTreeMap<(String, String), VoiceMailbox>,
    journal: Vec<String>,
    deposits: u64,
}

impl MailboxStore {
    pub fn from_conf(conf: &VoicemailConf) -> Self {
        let mut boxes = BTreeMap::new();
        for (ctx, entries) in &conf.contexts {
            for e in entries {
                boxes.insert(
                    (e.mailbox.clone(), ctx.clone()),
                    VoiceMailbox {
                        mailbox: e.mailbox.clone(),
                        context: ctx.clone(),
                        password: e.password.clone(),
                        owner_email: e.email.clone(),
                        messages: Vec::new(),
                    },
                );
            }
        }
        MailboxStore { boxes, journal: Vec::new(), deposits: 0 }
    }

    pub fn get(&self, r: &MailboxRef) -> Option<&VoiceMailbox> {
        self.boxes.get(&(r.mailbox.clone(), r.context.clone()))
    }

    pub fn message_count(&self, r: &MailboxRef) -> Option<usize> {
        self.get(r).map(|b| b.messages.len())
    }

    pub fn deposits(&self) -> u64 {
        self.deposits
    }

    /// Append a message and send the owner a voicemail notice.
    pub fn deposit(&mut self, r: &MailboxRef, from: &str, at: SimTime, sink: &mut Sink) -> Result<DepositReceipt, VoicemailError> {
        let b = self.boxes.get_mut(&(r.mailbox.clone(), r.context.clone())).ok_or_else(|| VoicemailError::UnknownBox(r.clone()))?;
        self.deposits += 1;
        let payload_ref = format!("msg{:04}", self.deposits);
        b.messages.push(VoiceMessage { from: from.to_string(), deposited_at: at, payload_ref: payload_ref.clone() });
        let notification = sink.send(Notification {
            to: b.owner_email.clone(),
            subject: format!("New voicemail in {r} from {from}"),
            body: format!("{} message(s) waiting in mailbox {r}.\nLatest: {payload_ref} from {from}.", b.messages.len()),
            at,
            category: Category::VoicemailNotice,
        });
        self.journal.push(format!("{}\t{r}\t{from}\t{payload_ref}", at.to_iso8601()));
        Ok(DepositReceipt { index: b.messages.len() - 1, notification })
    }

    pub fn retrieve(&self, r: &MailboxRef, password: &str) -> Result<&[VoiceMessage], VoicemailError> {
        let b = self.get(r).ok_or_else(|| VoicemailError::UnknownBox(r.clone()))?;
        if b.password != password {
            return Err(VoicemailError::WrongPassword(r.clone()));
        }
        Ok(&b.messages)
    }

    /// One line per deposit: ISO-8601 time, box@context, from, payload ref.
    pub fn journal(&self) -> String {
        let mut out = String::new();
        for line in &self.journal {
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acl::ivr_grant;
    use crate::confkit::parse_voicemail_conf;

    fn fixtures() -> (AttendanceStore, GrantTable) {
        let mut store = AttendanceStore::default();
        store.insert("1001", "2222", 87).unwrap();
        let mut grants = GrantTable::new();
        grants.apply(&ivr_grant());
        (store, grants)
    }

    fn drive(events: &[&str], store: &AttendanceStore, grants: &GrantTable) -> (Vec<Action>, IvrSession) {
        let principal = Principal::ivr();
        let gw = StoreGateway { store, grants, principal: &principal };
        let (mut all, mut s) = run_ivr(&IvrSession::default(), IvrEvent::Start, &gw).unwrap();
        for e in events {
            let (acts, next) = run_ivr(&s, IvrEvent::Digits(e.to_string()), &gw).unwrap();
            all.extend(acts);
            s = next;
        }
        (all, s)
    }

    #[test]
    fn authenticate_is_exact() {
        let (store, grants) = fixtures();
        let p = Principal::ivr();
        let gw = StoreGateway { store: &store, grants: &grants, principal: &p };
        assert_eq!(authenticate("1001", "2222", &gw), Ok(true));
        assert_eq!(authenticate("1001", "2223", &gw), Ok(false));
        assert_eq!(authenticate("0000", "2222", &gw), Ok(false));
        let mut down = store.clone();
        down.available = false;
        let gw = StoreGateway { store: &down, grants: &grants, principal: &p };
        assert!(authenticate("1001", "2222", &gw).is_err());
    }

    #[test]
    fn correct_credentials_say_attendance() {
        let (store, grants) = fixtures();
        let (actions, s) = drive(&["1001", "2222", "2"], &store, &grants);
        assert_eq!(
            actions,
            vec![
                play("welcome"),
                read("id", "enter-id"),
                read("pw", "enter-password"),
                Action::Query("attendance".into()),
                play("attendance-is"),
                Action::SayDigits("87".into()),
                read("again", "another-student"),
                play("goodbye"),
                Action::Hangup,
            ]
        );
        assert_eq!(s.phase, Phase::Done);
    }

    #[test]
    fn bad_password_loops_then_hangs_up() {
        let (store, grants) = fixtures();
        let (actions, s) = drive(&["1001", "9", "1001", "9"], &store, &grants);
        assert_eq!(actions[3..5], [play("bad-password"), read("id", "enter-id")]);
        assert_eq!(s.retries, 2);
        assert_eq!(s.phase, Phase::ReadId);
        let (actions, s) = drive(&["1001", "9", "1001", "9", "1001", "9"], &store, &grants);
        assert_eq!(actions.last(), Some(&Action::Hangup));
        assert_eq!(s.phase, Phase::Done);
        assert!(!actions.iter().any(|a| matches!(a, Action::SayDigits(_))));
    }

    #[test]
    fn another_student_resets_retries() {
        let (mut store, grants) = fixtures();
        store.insert("1002", "3333", 5).unwrap();
        let (actions, s) = drive(&["1001", "0", "1001", "2222", "1", "1002", "3333"], &store, &grants);
        let said: Vec<&Action> = actions.iter().filter(|a| matches!(a, Action::SayDigits(_))).collect();
        assert_eq!(said, [&Action::SayDigits("87".into()), &Action::SayDigits("5".into())]);
        assert_eq!(s.retries, 0);
    }

    #[test]
    fn missing_grant_is_a_service_error() {
        let (store, _) = fixtures();
        let (actions, s) = drive(&["1001", "2222"], &store, &GrantTable::new());
        assert_eq!(actions.last(), Some(&Action::Hangup));
        assert!(actions.contains(&play("service-unavailable")));
        assert_eq!(s.phase, Phase::Done);
    }

    #[test]
    fn mismatched_event_is_rejected() {
        let (store, grants) = fixtures();
        let p = Principal::ivr();
        let gw = StoreGateway { store: &store, grants: &grants, principal: &p };
        assert!(run_ivr(&IvrSession::default(), IvrEvent::Digits("1".into()), &gw).is_err());
    }

    #[test]
    fn deposit_and_retrieve() {
        let conf = parse_voicemail_conf("[vmail]\n756 => 1234, username, username@domain.com").unwrap();
        let mut mb = MailboxStore::from_conf(&conf);
        let mut sink = Sink::new();
        let r = MailboxRef::parse("756@vmail").unwrap();
        assert_eq!(mb.retrieve(&r, "1234").unwrap(), &[]);
        mb.deposit(&r, "harish", SimTime::from_secs(30), &mut sink).unwrap();
        mb.deposit(&r, "bob", SimTime::from_secs(40), &mut sink).unwrap();
        let msgs = mb.retrieve(&r, "1234").unwrap();
        assert_eq!(msgs.iter().map(|m| m.from.as_str()).collect::<Vec<_>>(), ["harish", "bob"]);
        assert_eq!(mb.retrieve(&r, "9999"), Err(VoicemailError::WrongPassword(r.clone())));
        let notices = sink.drain(&crate::notify::Filter { category: Some(Category::VoicemailNotice), to: None });
        assert_eq!(notices.len(), 2);
        assert_eq!(notices[0].to, "username@domain.com");
        assert_eq!(mb.journal(), "1970-01-01T00:00:30.000000Z\t756@vmail\tharish\tmsg0001\n1970-01-01T00:00:40.000000Z\t756@vmail\tbob\tmsg0002\n");
        let missing = MailboxRef::parse("999@vmail").unwrap();
        assert!(matches!(mb.deposit(&missing, "x", SimTime::ZERO, &mut sink), Err(VoicemailError::UnknownBox(_))));
    }
}
