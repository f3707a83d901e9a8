//! Runs a scenario: scripted SIP clients and attack traffic against one
//! [`Pbx`], all on a single virtual clock.

use std::collections::BTreeMap;
use std::fmt;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::Path;

use crate::acl::{AttendanceStore, Principal, Privilege, Scope};
use crate::media::{MediaSession, SsrcAllocator, FRAME_INTERVAL};
use crate::pktfilter::{Packet, Proto};
use crate::sentinel::RateRule;
use crate::sipnode::{authorization_header, compute_digest, Method, SipMessage, SipUri, StartLine, StatusCode};
use crate::tunnel::{InnerPacket, TunnelClient, PPTP_PORT};
use crate::SimTime;

use super::attack::attack_generate;
use super::clock::VirtualClock;
use super::config::{PbxConfig, StartupError};
use super::scenario::{Assertion, AttackSource, ClientSpec, Scenario, Verb};
use super::server::{Outbound, Outcome, Pbx, Timer};

/// Source port for client media.
pub const CLIENT_RTP_PORT: u16 = 4000;
/// A GSM 06.10 frame is 33 octets.
const GSM_FRAME: [u8; 33] = [0xd0; 33];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub line: usize,
    pub at: SimTime,
    pub step: String,
    pub detail: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "at {}: {}", self.at, self.detail)
        } else {
            write!(f, "line {} (t={}): {}: {}", self.line, self.at, self.step, self.detail)
        }
    }
}

#[derive(Debug)]
enum Event {
    Step(usize),
    Packet(Packet),
    /// Client traffic, wrapped for the wire only when it is delivered so
    /// tunnel frames are sealed in the order the server opens them.
    Send { client: usize, proto: Proto, sport: u16, dport: u16, payload: Vec<u8> },
    Timer(Timer),
    Reply(Outbound),
    MediaTick(String),
}

#[derive(Debug)]
struct Client {
    spec: ClientSpec,
    secret: Option<String>,
    tunnel: Option<TunnelClient>,
    vpn_login: Option<(String, String)>,
    counter: u32,
    transcript: Vec<String>,
    pending_register: Option<SipMessage>,
    auth_tried: bool,
    incoming: Option<SipMessage>,
    /// Call-ID and request-URI user of the dialog the client would hang up.
    current: Option<(String, String)>,
    /// The server's key for the client's most recent call.
    last_call: Option<String>,
}

impl Client {
    fn ip(&self) -> Ipv4Addr {
        self.tunnel.as_ref().map_or(self.spec.addr, |t| t.leased)
    }

    fn contact(&self) -> String {
        format!("<sip:{}@{}:{}>", self.spec.peer, self.ip(), self.spec.port)
    }

    fn next(&mut self) -> u32 {
        self.counter += 1;
        self.counter
    }

    /// Wrap a datagram for the wire, sealing it if the client is tunneled.
    fn packet(&mut self, proto: Proto, sport: u16, dport: u16, payload: Vec<u8>, at: SimTime) -> Packet {
        match self.tunnel.as_mut() {
            Some(t) => {
                let inner = InnerPacket { proto, sport, dport, payload };
                let frame = t.seal(&inner.encode());
                Packet { src: self.spec.addr, sport: 0, proto: Proto::Gre, dport: 0, payload: frame, arrival: at }
            }
            None => Packet { src: self.spec.addr, sport, proto, dport, payload, arrival: at },
        }
    }
}

struct MediaLeg {
    client: usize,
    server_port: u16,
    session: MediaSession,
}

/// The finished run: the server in its final state plus what the clients saw.
pub struct Run {
    pub name: String,
    pub pbx: Pbx,
    pub failures: Vec<Failure>,
    pub transcripts: BTreeMap<String, Vec<String>>,
}

impl Run {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn first_failure(&self) -> Option<&Failure> {
        self.failures.first()
    }

    pub fn transcript(&self, peer: &str) -> &[String] {
        self.transcripts.get(peer).map_or(&[], Vec::as_slice)
    }

    pub fn transcripts_text(&self) -> String {
        let mut out = String::new();
        for (peer, lines) in &self.transcripts {
            for l in lines {
                out.push_str(&format!("{peer}\t{l}\n"));
            }
        }
        out
    }

    /// Server state files plus the client transcripts and service log.
    pub fn artifacts(&self) -> BTreeMap<&'static str, String> {
        let mut out = self.pbx.artifacts();
        out.insert("transcripts.txt", self.transcripts_text());
        out.insert("services.log", self.pbx.service_log().iter().map(|l| format!("{l}\n")).collect());
        out
    }

    pub fn write_artifacts(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in self.artifacts() {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

struct Runner<'a> {
    sc: &'a Scenario,
    pbx: Pbx,
    clock: VirtualClock<Event>,
    clients: Vec<Client>,
    ssrc: SsrcAllocator,
    media: BTreeMap<String, Vec<MediaLeg>>,
    failures: Vec<Failure>,
    step: Option<usize>,
}

pub fn run_scenario_file(path: &Path) -> Result<Run, StartupError> {
    run_scenario(&Scenario::load(path)?)
}

/// Build the server from the scenario's configs and play the script.
/// Configuration problems abort before any step runs.
pub fn run_scenario(sc: &Scenario) -> Result<Run, StartupError> {
    let mut config = PbxConfig::load(&sc.configs)?;
    config.seed = sc.seed;
    let s = &sc.settings;
    if s.rate_threshold.is_some() || s.rate_window.is_some() {
        let base = config.sentinel.rate;
        let rule = RateRule::new(s.rate_threshold.unwrap_or(base.threshold), s.rate_window.unwrap_or(base.window))
            .ok_or_else(|| StartupError::Other("rate threshold and window must be positive".into()))?;
        config.sentinel.rate = RateRule { severe_multiplier: base.severe_multiplier, ..rule };
    }
    if let Some(on) = s.auto_response {
        config.sentinel.auto_response = on;
    }
    if let Some(level) = s.log_level {
        config.sentinel.log_level = level;
    }

    let mut store = AttendanceStore::default();
    for st in &sc.students {
        store.insert(&st.id, &st.password, st.attendance).map_err(|e| StartupError::Other(format!("student {}: {e}", st.id)))?;
    }
    let mut pbx = Pbx::new(&config, store).map_err(|e| StartupError::Other(e.to_string()))?;
    for g in &sc.grants {
        pbx.apply_statement(g).map_err(|e| StartupError::Other(format!("{g}: {e}")))?;
    }

    let clients = sc
        .clients
        .iter()
        .map(|spec| Client {
            secret: config.peers.iter().find(|p| p.auth_name() == spec.peer).and_then(|p| p.secret.clone()),
            spec: spec.clone(),
            tunnel: None,
            vpn_login: None,
            counter: 0,
            transcript: Vec::new(),
            pending_register: None,
            auth_tried: false,
            incoming: None,
            current: None,
            last_call: None,
        })
        .collect();

    let mut runner = Runner {
        sc,
        pbx,
        clock: VirtualClock::new(),
        clients,
        ssrc: SsrcAllocator::new(sc.seed),
        media: BTreeMap::new(),
        failures: Vec::new(),
        step: None,
    };
    runner.run();
    let Runner { pbx, clients, failures, .. } = runner;
    let transcripts = clients.into_iter().map(|c| (c.spec.peer, c.transcript)).collect();
    Ok(Run { name: sc.name.clone(), pbx, failures, transcripts })
}

impl Runner<'_> {
    fn run(&mut self) {
        self.pbx.start();
        for (i, step) in self.sc.steps.iter().enumerate() {
            self.clock.schedule(step.at, Event::Step(i));
        }
        let end = self.sc.end_time();
        while let Some((at, event)) = self.clock.pop_until(end) {
            self.pbx.set_now(at);
            self.handle(event);
            self.flush();
            if !self.pbx.sentinel.blacklist.coherent_with(&self.pbx.chain) {
                self.fail("blacklist and firewall chain disagree".to_string());
            }
        }
        self.pbx.stop();
        let m = &self.pbx.metrics;
        let verdicts = m.get("packets_accepted") + m.get("packets_dropped") + m.get("packets_rejected");
        if verdicts != m.get("packets_ingested") {
            self.step = None;
            self.fail(format!("{} packets ingested but {verdicts} verdicts counted", m.get("packets_ingested")));
        }
    }

    fn fail(&mut self, detail: String) {
        let (line, step) = match self.step.map(|i| &self.sc.steps[i]) {
            Some(s) => (s.line, s.text.clone()),
            None => (0, String::new()),
        };
        log::warn!("assertion failed at line {line}: {detail}");
        self.failures.push(Failure { line, at: self.clock.now(), step, detail });
    }

    fn server(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.pbx.addr(), self.pbx.sip_port())
    }

    fn client(&self, peer: &str) -> usize {
        self.clients.iter().position(|c| c.spec.peer == peer).expect("clients are checked when the scenario is parsed")
    }

    fn send_sip(&mut self, idx: usize, msg: &SipMessage, label: String) {
        let now = self.clock.now();
        let dport = self.pbx.sip_port();
        let c = &mut self.clients[idx];
        c.transcript.push(format!("> {label}"));
        let sport = c.spec.port;
        self.clock.schedule(now, Event::Send { client: idx, proto: Proto::Udp, sport, dport, payload: msg.encode() });
    }

    fn request(&mut self, idx: usize, method: Method, user: &str, call_id: &str, seq: u32) -> SipMessage {
        let server = self.server();
        let c = &self.clients[idx];
        SipMessage::request(method, SipUri::new(user, server.ip().to_string(), None))
            .with_header("From", format!("<sip:{}@{}>", c.spec.peer, server.ip()))
            .with_header("To", format!("<sip:{user}@{}>", server.ip()))
            .with_header("Call-ID", call_id)
            .with_header("CSeq", format!("{seq} {}", method.as_str()))
            .with_header("Contact", c.contact())
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Step(i) => {
                self.step = Some(i);
                self.do_step(i);
            }
            Event::Send { client, proto, sport, dport, payload } => {
                let now = self.clock.now();
                let p = self.clients[client].packet(proto, sport, dport, payload, now);
                self.handle(Event::Packet(p));
            }
            Event::Packet(p) => {
                let src = p.src;
                if self.pbx.dispatch(p) == Outcome::Rejected {
                    if let Some(c) = self.clients.iter_mut().find(|c| c.spec.addr == src) {
                        c.transcript.push("< refused".to_string());
                    }
                }
            }
            Event::Timer(t) => self.pbx.fire(t),
            Event::Reply(out) => self.reply(out),
            Event::MediaTick(call) => self.media_tick(call),
        }
    }

    /// Move what the server produced onto the clock.
    fn flush(&mut self) {
        let now = self.clock.now();
        for out in self.pbx.take_outbound() {
            self.clock.schedule(now, Event::Reply(out));
        }
        for (at, t) in self.pbx.take_timers() {
            self.clock.schedule(at, Event::Timer(t));
        }
        for start in self.pbx.take_media_starts() {
            let legs: Vec<MediaLeg> = start
                .legs
                .iter()
                .filter_map(|(ip, port)| {
                    let client = self.clients.iter().position(|c| c.ip() == *ip)?;
                    Some(MediaLeg { client, server_port: *port, session: self.ssrc.open_session() })
                })
                .collect();
            self.media.insert(start.call_id.clone(), legs);
            self.clock.schedule(now + FRAME_INTERVAL, Event::MediaTick(start.call_id));
        }
    }

    fn media_tick(&mut self, call: String) {
        if !self.pbx.call(&call).is_some_and(|c| c.is_bridged()) {
            self.media.remove(&call);
            return;
        }
        let now = self.clock.now();
        let Some(legs) = self.media.get_mut(&call) else { return };
        // Frames go straight in rather than through the queue, so a hangup
        // queued for this same instant cannot overtake them.
        let mut frames = Vec::new();
        for leg in legs.iter_mut() {
            let frame = leg.session.next_frame(GSM_FRAME.to_vec());
            frames.push(self.clients[leg.client].packet(Proto::Udp, CLIENT_RTP_PORT, leg.server_port, frame.encode(), now));
        }
        for p in frames {
            self.pbx.dispatch(p);
        }
        self.clock.schedule(now + FRAME_INTERVAL, Event::MediaTick(call));
    }

    fn reply(&mut self, out: Outbound) {
        if out.proto == Proto::Tcp {
            let Some(idx) = self.clients.iter().position(|c| c.spec.addr == *out.dst.ip()) else { return };
            let text = String::from_utf8_lossy(&out.payload).to_string();
            let c = &mut self.clients[idx];
            c.transcript.push(format!("< {text}"));
            if let (Some(addr), Some((user, pw))) = (text.strip_prefix("LEASE ").and_then(|a| a.trim().parse().ok()), c.vpn_login.take()) {
                c.tunnel = Some(TunnelClient::new(&user, &pw, addr));
            }
            return;
        }
        let idx = match &out.sealed {
            Some((peer, _)) => self.clients.iter().position(|c| c.spec.addr == *peer && c.tunnel.is_some()),
            None => self.clients.iter().position(|c| c.ip() == *out.dst.ip()),
        };
        let Some(idx) = idx else { return };
        if let Some((_, frame)) = &out.sealed {
            let opened = self.clients[idx].tunnel.as_mut().expect("matched on tunnel").open(frame);
            match opened.map(|b| InnerPacket::decode(&b)) {
                Ok(Ok(inner)) if inner.payload == out.payload => {}
                other => {
                    self.step = None;
                    return self.fail(format!("{} could not open a tunnel frame: {other:?}", self.clients[idx].spec.peer));
                }
            }
        }
        let Ok(msg) = SipMessage::decode(&out.payload) else { return };
        self.client_sip(idx, msg);
    }

    fn client_sip(&mut self, idx: usize, msg: SipMessage) {
        match msg.start.clone() {
            StartLine::Status(code) => {
                let method = msg.header("CSeq").and_then(|c| c.split_whitespace().nth(1)).unwrap_or("").to_string();
                self.clients[idx].transcript.push(format!("< {} {method}", code.code()));
                match (code, method.as_str()) {
                    (StatusCode::Unauthorized, "REGISTER") => self.answer_challenge(idx, &msg),
                    (StatusCode::Ok, "INVITE") => {
                        let call_id = msg.call_id().unwrap_or("").to_string();
                        let user = msg.uri().map(|u| u.user.clone()).or_else(|| self.clients[idx].current.as_ref().map(|c| c.1.clone()));
                        let ack = self.request(idx, Method::Ack, &user.unwrap_or_default(), &call_id, 1);
                        self.send_sip(idx, &ack, "ACK".into());
                    }
                    _ => {}
                }
            }
            StartLine::Request { method, .. } => {
                self.clients[idx].transcript.push(format!("< {}", method.as_str()));
                match method {
                    Method::Invite => self.clients[idx].incoming = Some(msg),
                    Method::Bye => {
                        let c = &mut self.clients[idx];
                        if c.current.as_ref().map(|(id, _)| id.as_str()) == msg.call_id() {
                            c.current = None;
                        }
                        self.send_sip(idx, &SipMessage::response_to(&msg, StatusCode::Ok), "200 BYE".into());
                    }
                    other => self.send_sip(idx, &SipMessage::response_to(&msg, StatusCode::Ok), format!("200 {}", other.as_str())),
                }
            }
        }
    }

    fn answer_challenge(&mut self, idx: usize, challenge: &SipMessage) {
        let c = &mut self.clients[idx];
        if c.auth_tried {
            return;
        }
        let (Some(secret), Some(nonce), Some(pending)) = (c.secret.clone(), challenge.header("Nonce"), c.pending_register.clone()) else {
            return;
        };
        c.auth_tried = true;
        let peer = c.spec.peer.clone();
        let seq = c.next();
        let response = compute_digest(&peer, &secret, nonce);
        let mut retry = pending.with_header("Authorization", authorization_header(&peer, nonce, &response));
        retry.set_header("CSeq", format!("{seq} REGISTER"));
        self.send_sip(idx, &retry, "REGISTER".into());
    }

    fn register(&mut self, idx: usize, expires: Option<&str>) {
        let peer = self.clients[idx].spec.peer.clone();
        let seq = self.clients[idx].next();
        let mut msg = self.request(idx, Method::Register, &peer, &format!("{peer}-reg"), seq);
        if let Some(e) = expires {
            msg = msg.with_header("Expires", e);
        }
        let c = &mut self.clients[idx];
        c.auth_tried = false;
        c.pending_register = Some(msg.clone());
        self.send_sip(idx, &msg, "REGISTER".into());
    }

    fn do_step(&mut self, i: usize) {
        let now = self.clock.now();
        match self.sc.steps[i].verb.clone() {
            Verb::Register(peer) => {
                let idx = self.client(&peer);
                self.register(idx, None);
            }
            Verb::Unregister(peer) => {
                let idx = self.client(&peer);
                self.register(idx, Some("0"));
            }
            Verb::Call { client, exten, dtmf } => {
                let idx = self.client(&client);
                let n = self.clients[idx].next();
                let call_id = format!("{client}-call-{n}");
                let mut invite = self.request(idx, Method::Invite, &exten, &call_id, 1);
                if let Some(d) = dtmf {
                    invite = invite.with_header("X-Dtmf", d);
                }
                let c = &mut self.clients[idx];
                c.current = Some((call_id.clone(), exten));
                c.last_call = Some(call_id);
                self.send_sip(idx, &invite, "INVITE".into());
            }
            Verb::Answer(client) => {
                let idx = self.client(&client);
                let Some(invite) = self.clients[idx].incoming.take() else {
                    return self.fail(format!("{client} has no incoming call to answer"));
                };
                let call_id = invite.call_id().unwrap_or("").to_string();
                let c = &mut self.clients[idx];
                c.last_call = Some(call_id.strip_suffix("-leg").unwrap_or(&call_id).to_string());
                c.current = Some((call_id, c.spec.peer.clone()));
                let ok = SipMessage::response_to(&invite, StatusCode::Ok).with_header("Contact", c.contact());
                self.send_sip(idx, &ok, "200 INVITE".into());
            }
            Verb::Bye(client) => {
                let idx = self.client(&client);
                let Some((call_id, user)) = self.clients[idx].current.clone() else {
                    return self.fail(format!("{client} has no call to hang up"));
                };
                let seq = self.clients[idx].next();
                let bye = self.request(idx, Method::Bye, &user, &call_id, seq + 1);
                self.send_sip(idx, &bye, "BYE".into());
            }
            Verb::Dtmf { client, digits } => {
                let idx = self.client(&client);
                let call = self.clients[idx].last_call.clone().unwrap_or_default();
                if !self.pbx.inject_dtmf(&call, &digits) {
                    self.fail(format!("{client} has no call to key digits into"));
                }
            }
            Verb::Attack { kind, src } => {
                let src = match src {
                    AttackSource::Addr(ip) => SocketAddrV4::new(ip, self.pbx.sip_port()),
                    AttackSource::Client(name) => {
                        let c = &self.clients[self.client(&name)];
                        SocketAddrV4::new(c.ip(), c.spec.port)
                    }
                };
                for p in attack_generate(&kind, src, self.server(), now) {
                    self.clock.schedule(p.arrival, Event::Packet(p));
                }
            }
            Verb::Assert(a) => {
                if let Err(detail) = self.check(&a) {
                    self.fail(detail);
                }
            }
            Verb::Statement(text) => {
                if let Err(e) = self.pbx.apply_statement(&text) {
                    self.fail(e.to_string());
                }
            }
            Verb::Vpn { client, user, password } => {
                let idx = self.client(&client);
                let c = &mut self.clients[idx];
                c.vpn_login = Some((user.clone(), password.clone()));
                c.transcript.push("> VPN".to_string());
                let p = Packet::tcp(c.spec.addr, 40_000, PPTP_PORT, format!("{user} {password}").into_bytes(), now);
                self.clock.schedule(now, Event::Packet(p));
            }
            Verb::Unblock(ip) => {
                if !self.pbx.unblock(ip) {
                    self.fail(format!("{ip} was not blacklisted"));
                }
            }
        }
    }

    fn call_of(&self, client: &str) -> Result<&super::server::Call, String> {
        let c = &self.clients[self.client(client)];
        let id = c.last_call.as_deref().ok_or_else(|| format!("{client} has made no call"))?;
        self.pbx.call(id).ok_or_else(|| format!("server has no call {id}"))
    }

    fn check(&mut self, a: &Assertion) -> Result<(), String> {
        let now = self.clock.now();
        let expect = |ok: bool, msg: String| if ok { Ok(()) } else { Err(msg) };
        match a {
            Assertion::Metric { name, value } => {
                let m = self.pbx.final_metrics();
                if !m.iter().any(|(n, _)| n == name) {
                    return Err(format!("no metric named {name}"));
                }
                expect(m.get(name) == *value, format!("metric {name} is {}, expected {value}", m.get(name)))
            }
            Assertion::Blacklisted(ip) => expect(self.pbx.sentinel.blacklist.contains(*ip), format!("{ip} is not blacklisted")),
            Assertion::NotBlacklisted(ip) => expect(!self.pbx.sentinel.blacklist.contains(*ip), format!("{ip} is blacklisted")),
            Assertion::Registered(p) => expect(self.pbx.registrar.lookup(p, now).is_some(), format!("{p} is not registered")),
            Assertion::NotRegistered(p) => expect(self.pbx.registrar.lookup(p, now).is_none(), format!("{p} is registered")),
            Assertion::CallState { client, state } => {
                let call = self.call_of(client)?;
                let got = call.session.state;
                expect(got == *state, format!("{client}'s call is {}, expected {}", got.as_str(), state.as_str()))
            }
            Assertion::Said { client, digits } => {
                let call = self.call_of(client)?;
                expect(call.said.contains(digits), format!("{client} heard {:?}, expected {digits}", call.said))
            }
            Assertion::NotSaid(client) => {
                let call = self.call_of(client)?;
                expect(call.said.is_empty(), format!("{client} heard {:?}", call.said))
            }
            Assertion::Mailbox { mailbox, count } => match self.pbx.mailboxes.message_count(mailbox) {
                Some(n) => expect(n == *count, format!("mailbox {mailbox} holds {n}, expected {count}")),
                None => Err(format!("no mailbox {mailbox}")),
            },
            Assertion::Leased { client, addr } => {
                let c = &self.clients[self.client(client)];
                let got = c.tunnel.as_ref().map(|t| t.leased);
                expect(got == Some(*addr), format!("{client} holds lease {got:?}, expected {addr}"))
            }
            Assertion::Check { principal, privilege, object, expected } => {
                let who: Principal = principal.parse().map_err(|e| format!("{e}"))?;
                let p: Privilege = privilege.parse().map_err(|e| format!("{e}"))?;
                let scope: Scope = object.parse().map_err(|e| format!("{e}"))?;
                let got = self.pbx.grants.check(&who, p, &scope);
                expect(got == *expected, format!("check {who} {privilege} on {scope} is {got}"))
            }
        }
    }
}
