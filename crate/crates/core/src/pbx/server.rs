//! The server side: tunnel, packet filter, IDS tap, then SIP and media
//! delivery, plus the call engine that runs the dial plan per call.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::time::Duration;

use crate::acl::{parse_statement, AclError, AttendanceStore, GrantTable, Principal};
use crate::confkit::MailboxRef;
use crate::dialplan::{compile, Action, CompileError, DialResult, Dialplan, ExecState, StepInput, INTER_DIGIT_TIMEOUT};
use crate::ivrvm::{run_ivr, IvrEvent, IvrSession, MailboxStore, Phase, StoreGateway, VoicemailError, ATTENDANCE_QUERY};
use crate::media::{RtpFrame, StreamMonitor};
use crate::notify::{Category, Sink};
use crate::pktfilter::{Chain, ChainOp, FilterRule, Packet, Proto, RuleMatcher, Verdict};
use crate::sentinel::{EventKind, SecurityEvent, Sentinel};
use crate::sipnode::{CallEvent, CallSession, CallState, Method, RegisterEvent, Registrar, SipMessage, SipUri, StartLine, StatusCode};
use crate::tunnel::{InnerPacket, TunnelServer, PPTP_PORT};
use crate::SimTime;

use super::config::PbxConfig;
use super::metrics::{RunMetrics, COUNTERS};

pub const RTP_PORT_BASE: u16 = 10_000;

/// A datagram the server sends. Traffic to a tunneled client also carries
/// the sealed frame and the client's real address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub dst: SocketAddrV4,
    pub proto: Proto,
    pub payload: Vec<u8>,
    pub sealed: Option<(Ipv4Addr, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Timer {
    DialTimeout { call: String },
    DigitTimeout { call: String, generation: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Accepted,
    Dropped,
    /// The sender is told the packet was refused.
    Rejected,
    /// Outer frame failed to open; counted as dropped.
    TunnelFailure,
}

/// A bridged call's media legs: (client address, server port) per leg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaStart {
    pub call_id: String,
    pub legs: Vec<(Ipv4Addr, u16)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub at: SimTime,
    pub src: Ipv4Addr,
    pub proto: Proto,
    pub dport: u16,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
enum Mode {
    Plan(ExecState),
    Ivr(IvrSession),
    VmLogin(MailboxRef, ExecState),
    Dialing(ExecState),
    Bridged,
    Ended,
}

#[derive(Debug, Clone)]
struct Leg {
    peer: String,
    contact: SocketAddrV4,
    call_id: String,
}

#[derive(Debug, Clone)]
pub struct Call {
    pub session: CallSession,
    pub said: Vec<String>,
    pub played: Vec<String>,
    pub diagnostics: Vec<String>,
    caller_contact: SocketAddrV4,
    invite: SipMessage,
    mode: Mode,
    digits: String,
    flush: bool,
    digit_gen: u64,
    answered: bool,
    cseq: u32,
    callee: Option<Leg>,
    media_rules: Vec<FilterRule>,
}

impl Call {
    pub fn is_over(&self) -> bool {
        matches!(self.mode, Mode::Ended)
    }

    pub fn is_bridged(&self) -> bool {
        matches!(self.mode, Mode::Bridged)
    }

    fn waiting_for_digits(&self) -> bool {
        match &self.mode {
            Mode::Plan(st) => st.awaiting_digits(),
            Mode::Ivr(s) => s.phase != Phase::Welcome && s.phase != Phase::Done,
            Mode::VmLogin(..) => true,
            _ => false,
        }
    }

    /// Next `#`-terminated chunk, or whatever is buffered once the
    /// inter-digit timer has expired.
    fn next_chunk(&mut self) -> Option<String> {
        if let Some(pos) = self.digits.find('#') {
            let chunk = self.digits[..pos].to_string();
            self.digits.drain(..=pos);
            return Some(chunk);
        }
        if std::mem::take(&mut self.flush) {
            return Some(std::mem::take(&mut self.digits));
        }
        None
    }
}

/// Service start and stop order. The store comes up first and the SIP
/// front end last, and they go down in reverse.
pub const SERVICES: [&str; 3] = ["store", "notifier", "sip"];

pub struct Pbx {
    now: SimTime,
    addr: Ipv4Addr,
    sip_port: u16,
    pub chain: Chain,
    pub sentinel: Sentinel,
    pub registrar: Registrar,
    pub plan: Dialplan,
    pub mailboxes: MailboxStore,
    pub sink: Sink,
    pub store: AttendanceStore,
    pub grants: GrantTable,
    pub tunnel: Option<TunnelServer>,
    pub metrics: RunMetrics,
    grant_journal: Vec<String>,
    calls: BTreeMap<String, Call>,
    leg_index: BTreeMap<String, String>,
    next_rtp_port: u16,
    monitors: BTreeMap<u16, StreamMonitor>,
    outbox: Vec<Outbound>,
    timers: Vec<(SimTime, Timer)>,
    media_starts: Vec<MediaStart>,
    capture: Vec<Captured>,
    sip_deliveries: Vec<(SimTime, Ipv4Addr)>,
    refusals: Vec<(SimTime, Ipv4Addr, Proto, u16)>,
    services: Vec<String>,
}

impl Pbx {
    pub fn new(config: &PbxConfig, store: AttendanceStore) -> Result<Pbx, CompileError> {
        let plan = compile(&config.dialplan, &config.report)?;
        let mut metrics = RunMetrics::default();
        for c in COUNTERS {
            metrics.set(c, 0);
        }
        Ok(Pbx {
            now: SimTime::ZERO,
            addr: config.server_addr,
            sip_port: config.sip_port,
            chain: crate::pktfilter::stock_chain(),
            sentinel: Sentinel::new(config.sentinel.clone()),
            registrar: Registrar::new(&config.peers),
            plan,
            mailboxes: MailboxStore::from_conf(&config.voicemail),
            sink: Sink::new(),
            store,
            grants: GrantTable::new(),
            tunnel: config.vpn.clone().map(|(c, creds)| TunnelServer::new(c, creds)),
            metrics,
            grant_journal: Vec::new(),
            calls: BTreeMap::new(),
            leg_index: BTreeMap::new(),
            next_rtp_port: RTP_PORT_BASE,
            monitors: BTreeMap::new(),
            outbox: Vec::new(),
            timers: Vec::new(),
            media_starts: Vec::new(),
            capture: Vec::new(),
            sip_deliveries: Vec::new(),
            refusals: Vec::new(),
            services: Vec::new(),
        })
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn sip_port(&self) -> u16 {
        self.sip_port
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn set_now(&mut self, now: SimTime) {
        assert!(now >= self.now, "server time went backwards");
        self.now = now;
    }

    pub fn start(&mut self) {
        for s in SERVICES {
            log::info!("starting {s}");
            self.services.push(format!("start {s}"));
        }
    }

    /// Stop services in reverse start order. Calls still up are torn down first.
    pub fn stop(&mut self) {
        let live: Vec<String> = self.calls.iter().filter(|(_, c)| !c.is_over()).map(|(k, _)| k.clone()).collect();
        for id in live {
            if let Some(mut call) = self.calls.remove(&id) {
                self.remove_media(&mut call);
                call.mode = Mode::Ended;
                self.calls.insert(id, call);
            }
        }
        for s in SERVICES.iter().rev() {
            log::info!("stopping {s}");
            self.services.push(format!("stop {s}"));
        }
    }

    pub fn service_log(&self) -> &[String] {
        &self.services
    }

    pub fn take_outbound(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_timers(&mut self) -> Vec<(SimTime, Timer)> {
        std::mem::take(&mut self.timers)
    }

    pub fn take_media_starts(&mut self) -> Vec<MediaStart> {
        std::mem::take(&mut self.media_starts)
    }

    pub fn capture(&self) -> &[Captured] {
        &self.capture
    }

    pub fn sip_deliveries(&self) -> &[(SimTime, Ipv4Addr)] {
        &self.sip_deliveries
    }

    pub fn refusals(&self) -> &[(SimTime, Ipv4Addr, Proto, u16)] {
        &self.refusals
    }

    pub fn call(&self, id: &str) -> Option<&Call> {
        self.calls.get(id)
    }

    pub fn calls(&self) -> impl Iterator<Item = (&String, &Call)> {
        self.calls.iter()
    }

    pub fn monitors(&self) -> &BTreeMap<u16, StreamMonitor> {
        &self.monitors
    }

    pub fn grant_journal(&self) -> &[String] {
        &self.grant_journal
    }

    // ---- admin operations ----

    pub fn apply_statement(&mut self, text: &str) -> Result<Vec<String>, AclError> {
        let stmt = parse_statement(text)?;
        let warnings = self.grants.apply(&stmt);
        self.grant_journal.push(stmt.to_string());
        Ok(warnings)
    }

    pub fn unblock(&mut self, src: Ipv4Addr) -> bool {
        self.sentinel.unblock(src, &mut self.chain, self.now)
    }

    /// Out-of-band keypad input for a call.
    pub fn inject_dtmf(&mut self, call_id: &str, digits: &str) -> bool {
        let Some(mut call) = self.calls.remove(call_id) else { return false };
        call.digits.extend(digits.chars().filter(|c| c.is_ascii_digit() || matches!(c, '*' | '#')));
        if call.waiting_for_digits() {
            self.drive(&mut call, StepInput::Continue);
        }
        self.calls.insert(call_id.to_string(), call);
        true
    }

    pub fn fire(&mut self, timer: Timer) {
        match timer {
            Timer::DialTimeout { call } => {
                let Some(mut c) = self.calls.remove(&call) else { return };
                if let Mode::Dialing(st) = std::mem::replace(&mut c.mode, Mode::Ended) {
                    self.no_answer(&mut c, st);
                } else {
                    c.mode = std::mem::replace(&mut c.mode, Mode::Ended);
                }
                self.calls.insert(call, c);
            }
            Timer::DigitTimeout { call, generation } => {
                let Some(mut c) = self.calls.remove(&call) else { return };
                if c.digit_gen == generation && c.waiting_for_digits() {
                    c.flush = true;
                    self.drive(&mut c, StepInput::Continue);
                }
                self.calls.insert(call, c);
            }
        }
    }

    // ---- pipeline ----

    fn raise(&mut self, event: SecurityEvent) {
        if let Some(cmd) = self.sentinel.observe(&event) {
            self.sentinel.active_response(&cmd, &mut self.chain, &mut self.sink, self.now);
        }
    }

    fn count_verdict(&mut self, v: Verdict) {
        self.metrics.incr(match v {
            Verdict::Accept => "packets_accepted",
            Verdict::Drop => "packets_dropped",
            Verdict::Reject => "packets_rejected",
        });
    }

    /// Ingest one packet: open the tunnel if it is a tunnel frame, filter,
    /// let the IDS see the outcome, then deliver.
    pub fn dispatch(&mut self, packet: Packet) -> Outcome {
        self.set_now(packet.arrival.max(self.now));
        self.metrics.incr("packets_ingested");
        let rtp = packet.proto == Proto::Udp && self.monitors.contains_key(&packet.dport);
        if !rtp {
            self.capture.push(Captured { at: self.now, src: packet.src, proto: packet.proto, dport: packet.dport, bytes: packet.payload.clone() });
        }

        let packet = if packet.proto == Proto::Gre && self.tunnel.as_mut().is_some_and(|t| t.session_for_peer(packet.src).is_some()) {
            if self.chain.evaluate(&packet) != Verdict::Accept {
                self.metrics.incr("packets_dropped");
                return Outcome::Dropped;
            }
            match self.open_tunnel_frame(&packet) {
                Ok(inner) => inner,
                Err(reason) => {
                    self.metrics.incr("tunnel_failures");
                    self.metrics.incr("packets_dropped");
                    self.raise(SecurityEvent::new(EventKind::IntegrityWarning, packet.src, self.now, reason));
                    return Outcome::TunnelFailure;
                }
            }
        } else {
            packet
        };

        let verdict = self.chain.evaluate(&packet);
        self.count_verdict(verdict);
        let blacklisted = self.sentinel.blacklist.contains(packet.src);
        if verdict != Verdict::Accept {
            if !blacklisted {
                let detail = format!("{} {}/{} refused", verdict, packet.proto, packet.dport);
                self.raise(SecurityEvent::new(EventKind::PortProbe, packet.src, self.now, detail));
            }
            if verdict == Verdict::Reject {
                self.refusals.push((self.now, packet.src, packet.proto, packet.dport));
                return Outcome::Rejected;
            }
            return Outcome::Dropped;
        }
        if blacklisted {
            self.metrics.incr("delivered_while_blacklisted");
        }
        self.deliver(packet);
        Outcome::Accepted
    }

    fn open_tunnel_frame(&mut self, packet: &Packet) -> Result<Packet, String> {
        let tunnel = self.tunnel.as_mut().expect("checked by caller");
        let session = tunnel.session_for_peer(packet.src).expect("checked by caller");
        let leased = session.leased;
        let plain = session.open(&packet.payload).map_err(|e| format!("tunnel frame from {}: {e}", packet.src))?;
        let inner = InnerPacket::decode(&plain).map_err(|e| format!("tunnel frame from {}: {e}", packet.src))?;
        self.metrics.incr("tunnel_frames");
        Ok(Packet { src: leased, sport: inner.sport, proto: inner.proto, dport: inner.dport, payload: inner.payload, arrival: packet.arrival })
    }

    fn deliver(&mut self, packet: Packet) {
        match (packet.proto, packet.dport) {
            (Proto::Udp, p) if p == self.sip_port => {
                self.sip_deliveries.push((self.now, packet.src));
                self.metrics.incr("sip_delivered");
                self.deliver_sip(SocketAddrV4::new(packet.src, packet.sport), &packet.payload);
            }
            (Proto::Udp, p) if self.monitors.contains_key(&p) => self.deliver_rtp(packet),
            (Proto::Tcp, PPTP_PORT) if self.tunnel.is_some() => self.tunnel_control(packet),
            _ => self.metrics.incr("stub_delivered"),
        }
    }

    fn deliver_rtp(&mut self, packet: Packet) {
        match RtpFrame::decode(&packet.payload) {
            Ok(frame) => {
                let monitor = self.monitors.get_mut(&packet.dport).expect("checked by caller");
                self.metrics.incr("rtp_frames");
                if !monitor.observe(&frame) {
                    self.metrics.incr("rtp_discontinuities");
                }
            }
            Err(e) => self.raise(SecurityEvent::new(EventKind::Generic, packet.src, self.now, format!("bad media frame: {e}"))),
        }
    }

    /// Control channel: payload `user password`, answered with `LEASE <addr>` or `DENIED`.
    fn tunnel_control(&mut self, packet: Packet) {
        let text = String::from_utf8_lossy(&packet.payload).to_string();
        let mut words = text.split_whitespace();
        let (Some(user), Some(pw)) = (words.next(), words.next()) else {
            self.metrics.incr("stub_delivered");
            return;
        };
        let now = self.now;
        let result = self.tunnel.as_mut().expect("checked by caller").establish(user, pw, packet.src, now);
        let reply = match result {
            Ok(leased) => format!("LEASE {leased}"),
            Err(e) => {
                self.raise(SecurityEvent::new(EventKind::AuthFailure, packet.src, now, format!("vpn login: {e}")));
                "DENIED".to_string()
            }
        };
        self.outbox.push(Outbound { dst: SocketAddrV4::new(packet.src, packet.sport), proto: Proto::Tcp, payload: reply.into_bytes(), sealed: None });
    }

    fn send_sip(&mut self, to: SocketAddrV4, msg: &SipMessage) {
        let payload = msg.encode();
        let sport = self.sip_port;
        let sealed = self.tunnel.as_mut().and_then(|t| {
            let s = t.session(*to.ip())?;
            let inner = InnerPacket { proto: Proto::Udp, sport, dport: to.port(), payload: payload.clone() };
            Some((s.peer, s.seal(&inner.encode())))
        });
        self.outbox.push(Outbound { dst: to, proto: Proto::Udp, payload, sealed });
    }

    fn deliver_sip(&mut self, src: SocketAddrV4, bytes: &[u8]) {
        let msg = match SipMessage::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.metrics.incr("sip_malformed");
                self.raise(SecurityEvent::new(EventKind::Generic, *src.ip(), self.now, format!("malformed SIP: {e}")));
                return;
            }
        };
        match msg.start.clone() {
            StartLine::Request { method, .. } => match method {
                Method::Register => self.handle_register(src, &msg),
                Method::Invite => self.handle_invite(src, &msg),
                Method::Bye => self.handle_bye(src, &msg),
                Method::Ack => {}
                Method::Options => {
                    self.raise(SecurityEvent::ignorable(*src.ip(), self.now, "OPTIONS keepalive"));
                    self.send_sip(src, &SipMessage::response_to(&msg, StatusCode::Ok));
                }
                Method::Subscribe | Method::Notify => self.send_sip(src, &SipMessage::response_to(&msg, StatusCode::Ok)),
            },
            StartLine::Status(code) => self.handle_response(code, &msg),
        }
    }

    fn handle_register(&mut self, src: SocketAddrV4, msg: &SipMessage) {
        let (resp, event) = self.registrar.handle_register(msg, src, self.now);
        let ip = *src.ip();
        let sec = match event {
            RegisterEvent::Challenged { peer } => Some(SecurityEvent::new(EventKind::RegisterAttempt, ip, self.now, format!("REGISTER challenge for {peer}"))),
            RegisterEvent::Registered { peer } => {
                self.metrics.incr("registrations_ok");
                Some(SecurityEvent::new(EventKind::RegisterAttempt, ip, self.now, format!("{peer} registered")))
            }
            RegisterEvent::Unregistered { peer } => Some(SecurityEvent::new(EventKind::RegisterAttempt, ip, self.now, format!("{peer} unregistered"))),
            RegisterEvent::AuthFailure { peer, reason } => {
                self.metrics.incr("registrations_failed");
                Some(SecurityEvent::new(EventKind::AuthFailure, ip, self.now, format!("REGISTER {peer}: {reason}")))
            }
            RegisterEvent::UnknownUser { user } => {
                self.metrics.incr("registrations_failed");
                Some(SecurityEvent::new(EventKind::UnknownUser, ip, self.now, format!("REGISTER for unknown user {user}")))
            }
            RegisterEvent::NotRegister => None,
        };
        if let Some(e) = sec {
            self.raise(e);
        }
        self.send_sip(src, &resp);
    }

    fn handle_invite(&mut self, src: SocketAddrV4, msg: &SipMessage) {
        let refuse = |pbx: &mut Pbx, code: StatusCode| {
            pbx.metrics.incr("calls_refused");
            pbx.send_sip(src, &SipMessage::response_to(msg, code));
        };
        let Some(call_id) = msg.call_id().map(str::to_string) else {
            return refuse(self, StatusCode::Forbidden);
        };
        if self.calls.contains_key(&call_id) {
            return;
        }
        let Some(caller) = self.registrar.registered_at(*src.ip(), self.now).map(|r| (r.peer.clone(), r.contact)) else {
            self.raise(SecurityEvent::new(EventKind::UnknownUser, *src.ip(), self.now, "INVITE from unregistered source"));
            return refuse(self, StatusCode::Forbidden);
        };
        let (caller_peer, contact) = caller;
        let context = self.registrar.peer(&caller_peer).map(|p| p.context.clone()).unwrap_or_default();
        let exten = msg.uri().map(|u| u.user.clone()).unwrap_or_default();
        let Ok(state) = self.plan.start(&context, &exten) else {
            return refuse(self, StatusCode::NotFound);
        };
        self.metrics.incr("calls_started");
        let mut call = Call {
            session: CallSession::invite(call_id.clone(), caller_peer, exten),
            said: Vec::new(),
            played: Vec::new(),
            diagnostics: Vec::new(),
            caller_contact: contact,
            invite: msg.clone(),
            mode: Mode::Plan(state),
            digits: msg.header("X-Dtmf").unwrap_or("").chars().filter(|c| c.is_ascii_digit() || matches!(c, '*' | '#')).collect(),
            flush: false,
            digit_gen: 0,
            answered: false,
            cseq: 0,
            callee: None,
            media_rules: Vec::new(),
        };
        self.drive(&mut call, StepInput::Continue);
        self.calls.insert(call_id, call);
    }

    fn find_call_id(&self, id: &str) -> Option<String> {
        if self.calls.contains_key(id) {
            Some(id.to_string())
        } else {
            self.leg_index.get(id).cloned()
        }
    }

    fn handle_bye(&mut self, src: SocketAddrV4, msg: &SipMessage) {
        let Some(id) = msg.call_id().and_then(|c| self.find_call_id(c)) else {
            return self.send_sip(src, &SipMessage::response_to(msg, StatusCode::NotFound));
        };
        let mut call = self.calls.remove(&id).expect("indexed call exists");
        match call.session.clone().apply(CallEvent::Bye) {
            Ok(session) => {
                self.send_sip(src, &SipMessage::response_to(msg, StatusCode::Ok));
                call.session = session;
                self.metrics.incr("calls_completed");
                let from_caller = msg.call_id() == Some(id.as_str());
                match (&call.callee, from_caller) {
                    (Some(leg), true) if call.is_bridged() => {
                        let (contact, leg_id, peer) = (leg.contact, leg.call_id.clone(), leg.peer.clone());
                        self.send_bye(contact, &peer, &leg_id, &mut call.cseq);
                    }
                    (_, false) => {
                        let (contact, peer) = (call.caller_contact, call.session.caller.clone());
                        self.send_bye(contact, &peer, &id, &mut call.cseq);
                    }
                    _ => {}
                }
                self.remove_media(&mut call);
                call.mode = Mode::Ended;
            }
            Err(e) => {
                log::warn!("{e}");
                call.diagnostics.push(e.to_string());
                self.send_sip(src, &SipMessage::response_to(msg, StatusCode::Forbidden));
            }
        }
        self.calls.insert(id, call);
    }

    fn handle_response(&mut self, code: StatusCode, msg: &SipMessage) {
        if code != StatusCode::Ok || msg.header("CSeq").is_none_or(|c| !c.ends_with("INVITE")) {
            return;
        }
        let Some(id) = msg.call_id().and_then(|c| self.leg_index.get(c).cloned()) else { return };
        let mut call = self.calls.remove(&id).expect("indexed call exists");
        if matches!(call.mode, Mode::Dialing(_)) {
            match call.session.clone().apply(CallEvent::Answer) {
                Ok(s) => call.session = s,
                Err(e) => call.diagnostics.push(e.to_string()),
            }
            call.answered = true;
            let ok = SipMessage::response_to(&call.invite, StatusCode::Ok).with_header("Contact", format!("<sip:{}@{}:{}>", call.session.callee, self.addr, self.sip_port));
            self.send_sip(call.caller_contact, &ok);
            self.setup_media(&mut call, &id);
            call.mode = Mode::Bridged;
        }
        self.calls.insert(id, call);
    }

    fn setup_media(&mut self, call: &mut Call, id: &str) {
        let mut legs = Vec::new();
        let callee_ip = call.callee.as_ref().map(|l| *l.contact.ip());
        for ip in [Some(*call.caller_contact.ip()), callee_ip].into_iter().flatten() {
            let port = self.next_rtp_port;
            self.next_rtp_port += 2;
            let rule = FilterRule::new(Proto::Udp, Some(port), Some(ip), Verdict::Accept).expect("udp rule with port");
            self.chain.mutate(ChainOp::InsertHead(rule));
            call.media_rules.push(rule);
            self.monitors.insert(port, StreamMonitor::default());
            legs.push((ip, port));
        }
        self.media_starts.push(MediaStart { call_id: id.to_string(), legs });
    }

    fn remove_media(&mut self, call: &mut Call) {
        for rule in call.media_rules.drain(..) {
            self.chain.mutate(ChainOp::DeleteMatching(RuleMatcher::exact(&rule)));
        }
    }

    fn send_bye(&mut self, to: SocketAddrV4, peer: &str, call_id: &str, cseq: &mut u32) {
        *cseq += 1;
        let bye = SipMessage::request(Method::Bye, SipUri::new(peer, to.ip().to_string(), Some(to.port())))
            .with_header("From", format!("<sip:pbx@{}>", self.addr))
            .with_header("To", format!("<sip:{peer}@{}>", to.ip()))
            .with_header("Call-ID", call_id)
            .with_header("CSeq", format!("{} BYE", *cseq + 100));
        self.send_sip(to, &bye);
    }

    /// Answer the caller leg if that has not happened yet.
    fn answer(&mut self, call: &mut Call) {
        if call.answered {
            return;
        }
        call.answered = true;
        for ev in [CallEvent::Ring, CallEvent::Answer] {
            if let Ok(s) = call.session.clone().apply(ev) {
                call.session = s;
            }
        }
        let ok = SipMessage::response_to(&call.invite, StatusCode::Ok).with_header("Contact", format!("<sip:{}@{}:{}>", call.session.callee, self.addr, self.sip_port));
        self.send_sip(call.caller_contact, &ok);
    }

    fn server_hangup(&mut self, call: &mut Call) {
        if let Ok(s) = call.session.clone().apply(CallEvent::Bye) {
            call.session = s;
            self.metrics.incr("calls_completed");
        }
        let (contact, peer, id) = (call.caller_contact, call.session.caller.clone(), call.session.id.clone());
        self.send_bye(contact, &peer, &id, &mut call.cseq);
        self.remove_media(call);
        call.mode = Mode::Ended;
    }

    fn arm_digit_timer(&mut self, call: &mut Call) {
        call.digit_gen += 1;
        self.timers.push((self.now + INTER_DIGIT_TIMEOUT, Timer::DigitTimeout { call: call.session.id.clone(), generation: call.digit_gen }));
    }

    fn start_dial(&mut self, call: &mut Call, st: ExecState, target: &str, timeout: Duration) {
        if let Ok(s) = call.session.clone().apply(CallEvent::Ring) {
            call.session = s;
        }
        let contact = self.registrar.lookup(target, self.now).map(|r| r.contact);
        let leg_id = format!("{}-leg", call.session.id);
        call.callee = Some(Leg { peer: target.to_string(), contact: contact.unwrap_or(SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0)), call_id: leg_id.clone() });
        let Some(contact) = contact else {
            log::info!("{target} is not registered; treating as no answer");
            call.callee = None;
            return self.no_answer(call, st);
        };
        self.leg_index.insert(leg_id.clone(), call.session.id.clone());
        let invite = SipMessage::request(Method::Invite, SipUri::new(target, contact.ip().to_string(), Some(contact.port())))
            .with_header("From", format!("<sip:{}@{}>", call.session.caller, self.addr))
            .with_header("To", format!("<sip:{target}@{}>", contact.ip()))
            .with_header("Call-ID", leg_id)
            .with_header("CSeq", "1 INVITE");
        self.send_sip(contact, &invite);
        self.timers.push((self.now + timeout, Timer::DialTimeout { call: call.session.id.clone() }));
        call.mode = Mode::Dialing(st);
    }

    /// The callee did not pick up: leave voicemail in the callee's box, mail
    /// its owner, and let the dial plan continue.
    fn no_answer(&mut self, call: &mut Call, st: ExecState) {
        match call.session.clone().apply(CallEvent::Timeout) {
            Ok(s) => call.session = s,
            Err(e) => call.diagnostics.push(e.to_string()),
        }
        self.metrics.incr("calls_no_answer");
        if let Some(leg) = call.callee.clone() {
            self.send_bye(leg.contact, &leg.peer, &leg.call_id, &mut call.cseq);
        }
        let mailbox = self.registrar.peer(&call.session.callee).and_then(|p| p.mailbox.clone());
        let callee = call.callee.as_ref().map(|l| l.peer.clone()).unwrap_or_else(|| call.session.callee.clone());
        let mailbox = mailbox.or_else(|| self.registrar.peer(&callee).and_then(|p| p.mailbox.clone()));
        match mailbox {
            Some(r) => match self.mailboxes.deposit(&r, &call.session.caller, self.now, &mut self.sink) {
                Ok(_) => self.metrics.incr("voicemail_deposits"),
                Err(e) => call.diagnostics.push(e.to_string()),
            },
            None => call.diagnostics.push(format!("{callee} has no mailbox")),
        }
        self.answer(call);
        call.mode = Mode::Plan(st);
        self.drive(call, StepInput::Dial(DialResult::NoAnswer));
    }

    fn drive(&mut self, call: &mut Call, mut input: StepInput) {
        loop {
            match std::mem::replace(&mut call.mode, Mode::Ended) {
                Mode::Plan(st) => {
                    let mut inp = std::mem::replace(&mut input, StepInput::Continue);
                    if st.awaiting_digits() {
                        match call.next_chunk() {
                            Some(chunk) => inp = StepInput::Digits(chunk + "#"),
                            None => {
                                call.mode = Mode::Plan(st);
                                return self.arm_digit_timer(call);
                            }
                        }
                    }
                    let step = self.plan.step(&st, inp);
                    if let Some(d) = step.diagnostic {
                        call.diagnostics.push(d);
                    }
                    let st = step.state;
                    match step.action {
                        Action::Play(token) => {
                            self.answer(call);
                            call.played.push(token);
                            call.mode = Mode::Plan(st);
                        }
                        Action::SayDigits(d) => {
                            self.answer(call);
                            call.said.push(d);
                            call.mode = Mode::Plan(st);
                        }
                        Action::Read { .. } => {
                            self.answer(call);
                            call.mode = Mode::Plan(st);
                        }
                        Action::AwaitDigits | Action::Goto(_) => call.mode = Mode::Plan(st),
                        Action::Hangup => {
                            self.answer(call);
                            return self.server_hangup(call);
                        }
                        Action::Dial { target, timeout } => return self.start_dial(call, st, &target, timeout),
                        Action::AwaitDial => {
                            call.mode = Mode::Dialing(st);
                            return;
                        }
                        Action::Query(template) => {
                            self.answer(call);
                            if template.eq_ignore_ascii_case(ATTENDANCE_QUERY) {
                                call.mode = Mode::Ivr(IvrSession::default());
                            } else {
                                call.diagnostics.push(format!("unknown query template {template:?}"));
                                call.played.push(crate::ivrvm::prompts::SERVICE_UNAVAILABLE.to_string());
                                return self.server_hangup(call);
                            }
                        }
                        Action::VoiceMail(r) => {
                            self.answer(call);
                            call.played.push("vm-login".to_string());
                            call.mode = Mode::VmLogin(r, st);
                        }
                    }
                }
                Mode::Ivr(session) => {
                    let event = if session.phase == Phase::Welcome {
                        IvrEvent::Start
                    } else {
                        match call.next_chunk() {
                            Some(chunk) => IvrEvent::Digits(chunk),
                            None => {
                                call.mode = Mode::Ivr(session);
                                return self.arm_digit_timer(call);
                            }
                        }
                    };
                    let principal = Principal::ivr();
                    let gw = StoreGateway { store: &self.store, grants: &self.grants, principal: &principal };
                    match run_ivr(&session, event, &gw) {
                        Ok((actions, next)) => {
                            call.mode = Mode::Ivr(next);
                            for a in actions {
                                match a {
                                    Action::Play(t) => call.played.push(t),
                                    Action::SayDigits(d) => call.said.push(d),
                                    Action::Query(_) => self.metrics.incr("ivr_queries"),
                                    Action::Hangup => return self.server_hangup(call),
                                    _ => {}
                                }
                            }
                        }
                        Err(e) => {
                            call.diagnostics.push(e.to_string());
                            return self.server_hangup(call);
                        }
                    }
                }
                Mode::VmLogin(r, st) => {
                    let Some(pw) = call.next_chunk() else {
                        call.mode = Mode::VmLogin(r, st);
                        return self.arm_digit_timer(call);
                    };
                    match self.mailboxes.retrieve(&r, &pw) {
                        Ok(msgs) => {
                            call.played.push("vm-you-have".to_string());
                            call.said.push(msgs.len().to_string());
                            call.mode = Mode::Plan(st);
                        }
                        Err(VoicemailError::WrongPassword(_)) => {
                            self.metrics.incr("voicemail_logins_failed");
                            let src = *call.caller_contact.ip();
                            self.raise(SecurityEvent::new(EventKind::AuthFailure, src, self.now, format!("voicemail login to {r} failed")));
                            call.played.push("vm-incorrect".to_string());
                            return self.server_hangup(call);
                        }
                        Err(e) => {
                            call.diagnostics.push(e.to_string());
                            return self.server_hangup(call);
                        }
                    }
                }
                other @ (Mode::Dialing(_) | Mode::Bridged | Mode::Ended) => {
                    call.mode = other;
                    return;
                }
            }
        }
    }

    /// Metrics with the derived counters filled in.
    pub fn final_metrics(&self) -> RunMetrics {
        let mut m = self.metrics.clone();
        for (level, n) in self.sentinel.alerts_by_level().iter().enumerate() {
            m.set(&format!("alerts_level_{level:02}"), *n);
        }
        m.set("alerts_logged", self.sentinel.logged_alerts().count() as u64);
        m.set("blacklist_size", self.sentinel.blacklist.len() as u64);
        m.set("notifications_admin_alert", self.sink.count(Category::AdminAlert) as u64);
        m.set("notifications_voicemail_notice", self.sink.count(Category::VoicemailNotice) as u64);
        m.set("firewall_rules", self.chain.rules.len() as u64);
        m.set("vpn_sessions", self.tunnel.as_ref().map_or(0, |t| t.sessions().count()) as u64);
        m.set("registrations_active", self.registrar.registrations().filter(|r| r.expires_at > self.now).count() as u64);
        m
    }

    /// The on-disk state, keyed by file name.
    pub fn artifacts(&self) -> BTreeMap<&'static str, String> {
        let mut out = BTreeMap::new();
        out.insert("firewall.rules", self.chain.dump());
        out.insert("blacklist.tsv", self.sentinel.blacklist.to_text());
        out.insert("alerts.log", self.sentinel.alert_log());
        out.insert("grants", self.grant_journal.iter().map(|l| format!("{l}\n")).collect());
        out.insert("vpn-sessions.tsv", self.tunnel.as_ref().map(|t| t.sessions_text()).unwrap_or_default());
        out.insert("mail.journal", self.sink.journal());
        out.insert("voicemail.journal", self.mailboxes.journal());
        out.insert("metrics.txt", self.final_metrics().report());
        out
    }
}

impl CallState {
    /// Parse the `as_str` form.
    pub fn parse(s: &str) -> Option<CallState> {
        [CallState::Inviting, CallState::Ringing, CallState::Active, CallState::Terminated, CallState::NoAnswer]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}
