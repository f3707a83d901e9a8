//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use minipbx::acl::{ivr_grant, parse_statement, AttendanceStore, GrantTable, Principal, Privilege, Scope};
use minipbx::confkit::{parse_extensions_conf, parse_sip_conf, parse_vpn_config, parse_voicemail_conf, validate_cross, MailboxEntry, OperationKind};
use minipbx::dialplan::Action;
use minipbx::ivrvm::{prompts, run_ivr, IvrEvent, IvrSession, StoreGateway};
use minipbx::media::{MediaSession, RtpFrame, StreamMonitor};
use minipbx::notify::{Category, Sink};
use minipbx::pbx::{run_scenario_file, Run};
use minipbx::pktfilter::{stock_chain, Chain, FilterRule, Packet, Proto, Verdict};
use minipbx::sentinel::{EventKind, RateDetector, RateRule, SecurityEvent, Sentinel, SentinelConfig};
use minipbx::tunnel::{derive_key, Rc4State, TunnelClient, TunnelServer};
use minipbx::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIOS: [&str; 7] = ["happy-call", "no-answer", "flood", "ivr", "brute-force", "port-scan", "vpn"];

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(name: &str) -> Run {
    let run = run_scenario_file(&repo().join(format!("scenarios/{name}.scn"))).expect("scenario starts");
    assert!(run.passed(), "{name}: {:?}", run.first_failure());
    run
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// 1. Configuration corpus and startup refusal.
fn config_corpus() {
    let doc = parse_extensions_conf("[context-name]\nexten => 111 , 1, Operation();").unwrap();
    let line = &doc.contexts[0].lines[0];
    assert_eq!((line.exten.as_str(), line.priority, line.op.name.as_str(), line.op.args.as_str()), ("111", 1, "Operation", ""));

    let doc = parse_extensions_conf("[vmail]\nexten => 444, 1, VoiceMailMain(756@vmail)").unwrap();
    let line = &doc.contexts[0].lines[0];
    assert_eq!((line.exten.as_str(), line.priority), ("444", 1));
    assert_eq!(line.op.kind(), Some(OperationKind::VoiceMailMain));
    assert_eq!(line.op.args, "756@vmail");

    let vm = parse_voicemail_conf("[vmail]\n756 => 1234, username, username@domain.com").unwrap();
    assert_eq!(
        vm.contexts["vmail"],
        vec![MailboxEntry {
            mailbox: "756".into(),
            password: "1234".into(),
            display_name: "username".into(),
            email: "username@domain.com".into(),
            extras: vec![],
        }]
    );

    let peers = parse_sip_conf("[harish]\ntype=friend\nsecret=1234\ncontext=office\n").unwrap();
    let stray = parse_extensions_conf("[office]\nexten => 1,1,Hangup()\n[lobby]\nexten => 2,1,Hangup()\n").unwrap();
    let report = validate_cross(&peers, &stray, &vm);
    assert!(!report.ok());
    assert!(report.errors().any(|f| f.message.contains("context lobby unmatched")));

    let dir = tempfile::tempdir().unwrap();
    let ext = dir.path().join("extensions.conf");
    std::fs::write(&ext, "[lobby]\nexten => 100,1,Dial(SIP/harish,20)\n").unwrap();
    let conf = repo().join("scenarios/conf");
    for cmd in ["validate", "daemon"] {
        let status = Command::new(env!("CARGO_BIN_EXE_pbxctl"))
            .arg("--state-dir")
            .arg(dir.path())
            .arg(cmd)
            .arg("--sip-conf")
            .arg(conf.join("sip.conf"))
            .arg("--extensions-conf")
            .arg(&ext)
            .arg("--voicemail-conf")
            .arg(conf.join("voicemail.conf"))
            .output()
            .unwrap()
            .status;
        assert_eq!(status.code(), Some(2), "{cmd}");
    }
}

// 2. Stock firewall against a chain walk written from the policy table.
fn firewall_matrix() {
    // (proto, dport, verdict) in the order the commands are issued.
    const TABLE: [(&str, Option<u16>, &str); 12] = [
        ("tcp", None, "DROP"),
        ("tcp", Some(22), "ACCEPT"),
        ("icmp", None, "ACCEPT"),
        ("udp", None, "DROP"),
        ("udp", Some(5060), "ACCEPT"),
        ("udp", Some(3306), "ACCEPT"),
        ("tcp", Some(1723), "ACCEPT"),
        ("udp", Some(1723), "ACCEPT"),
        ("tcp", Some(25), "ACCEPT"),
        ("udp", Some(25), "ACCEPT"),
        ("tcp", Some(110), "ACCEPT"),
        ("udp", Some(110), "ACCEPT"),
    ];
    let mut chain = Chain::default();
    for (proto, port, verdict) in TABLE {
        let port = port.map(|p| format!(" --dport {p}")).unwrap_or_default();
        chain.apply_command(&format!("iptables -I INPUT -p {proto}{port} -j {verdict}")).unwrap();
    }
    assert_eq!(chain, stock_chain());

    // Inserting at the head means the last command issued is consulted first.
    let walk = |proto: &str, port: Option<u16>| -> &str {
        TABLE
            .iter()
            .rev()
            .find(|(p, d, _)| *p == proto && d.is_none_or(|d| Some(d) == port))
            .map_or("ACCEPT", |(_, _, v)| *v)
    };
    let src = Ipv4Addr::new(198, 51, 100, 1);
    let mut admitted = Vec::new();
    for (proto, name) in [(Proto::Tcp, "tcp"), (Proto::Udp, "udp")] {
        for port in 0..=u16::MAX {
            let pkt = if proto == Proto::Tcp {
                Packet::tcp(src, 40000, port, Vec::new(), SimTime::ZERO)
            } else {
                Packet::udp(src, 40000, port, Vec::new(), SimTime::ZERO)
            };
            let got = chain.evaluate(&pkt);
            assert_eq!(got.as_str(), walk(name, Some(port)), "{name}/{port}");
            if got == Verdict::Accept {
                admitted.push(format!("{name}:{port}"));
            }
        }
    }
    let icmp = Packet { proto: Proto::Icmp, ..Packet::udp(src, 0, 0, Vec::new(), SimTime::ZERO) };
    assert_eq!(chain.evaluate(&icmp).as_str(), walk("icmp", None));
    if chain.evaluate(&icmp) == Verdict::Accept {
        admitted.push("icmp".into());
    }
    let expected = ["tcp:22", "tcp:25", "tcp:110", "tcp:1723", "udp:25", "udp:110", "udp:1723", "udp:3306", "udp:5060", "icmp"];
    assert_eq!(admitted, expected);
}

// 3. Rate threshold boundary and sliding-window recount.
fn rate_detector() {
    let src = Ipv4Addr::new(10, 66, 0, 7);
    let mut sentinel = Sentinel::new(SentinelConfig::default());
    let mut chain = stock_chain();
    let mut sink = Sink::new();
    for i in 0..10 {
        let ev = SecurityEvent::new(EventKind::RegisterAttempt, src, SimTime::from_secs(i * 5), "REGISTER");
        assert!(sentinel.observe(&ev).is_none(), "event {}", i + 1);
    }
    let ev = SecurityEvent::new(EventKind::RegisterAttempt, src, SimTime::from_secs(50), "REGISTER");
    let cmd = sentinel.observe(&ev).expect("11th event in the window blacklists");
    assert!(sentinel.active_response(&cmd, &mut chain, &mut sink, ev.at));
    assert_eq!(chain.rules.len(), 13);
    assert_eq!(chain.rules[0], FilterRule::drop_source(src));
    assert_eq!(chain.rules.iter().filter(|r| r.src == Some(src)).count(), 1);
    assert_eq!(sink.count(Category::AdminAlert), 1);
    assert_eq!(sink.len(), 1);

    // Eleven events spread so that no 60 s window holds more than ten.
    let mut sentinel = Sentinel::new(SentinelConfig::default());
    for i in 0..11 {
        let ev = SecurityEvent::new(EventKind::RegisterAttempt, src, SimTime::from_secs(i * 12), "REGISTER");
        assert!(sentinel.observe(&ev).is_none());
    }

    let rule = RateRule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for stream in 0..3 {
        let sources: Vec<Ipv4Addr> = (1..=4).map(|h| Ipv4Addr::new(10, 0, stream, h)).collect();
        let mut detector = RateDetector::new(rule);
        let mut history: BTreeMap<Ipv4Addr, Vec<(u64, bool)>> = BTreeMap::new();
        let mut t = 0u64;
        for _ in 0..10_000 {
            // Mostly bursts, with the occasional quiet spell that empties every window.
            t += if rng.gen_bool(0.01) { rng.gen_range(60_000_000..200_000_000u64) } else { rng.gen_range(0..2_000_000u64) };
            let src = sources[rng.gen_range(0..sources.len())];
            let (count, fire) = detector.record(src, SimTime::from_micros(t));

            let past = history.entry(src).or_default();
            let window = rule.window.as_micros() as u64;
            let want_count = 1 + past.iter().filter(|(at, _)| t - at < window).count() as u32;
            // An episode runs from the first event after a gap of a full window.
            let episode_start = (0..=past.len())
                .rev()
                .find(|&i| i == 0 || (if i == past.len() { t } else { past[i].0 }) - past[i - 1].0 >= window)
                .unwrap();
            let already = past[episode_start..].iter().any(|(_, fired)| *fired);
            let want_fire = want_count > rule.threshold && !already;
            assert_eq!((count, fire), (want_count, want_fire), "stream {stream} at {t}");
            past.push((t, fire));
        }
        let fires: usize = history.values().map(|h| h.iter().filter(|(_, f)| *f).count()).sum();
        assert!(fires > 20, "stream {stream} only fired {fires} times");
    }
}

// 4. Classification coverage and the flood alert log.
fn classification() {
    let sentinel = Sentinel::new(SentinelConfig::default());
    let src = Ipv4Addr::new(10, 1, 1, 1);
    for kind in EventKind::ALL {
        let alert = sentinel.classify(&SecurityEvent::new(kind, src, SimTime::ZERO, "x"));
        assert!(alert.level <= 15, "{kind}");
    }
    let mut sentinel = Sentinel::new(SentinelConfig::default());
    for i in 0..100 {
        let ev = SecurityEvent::ignorable(src, SimTime::from_millis(i), "keepalive");
        assert_eq!(sentinel.classify(&ev).level, 0);
        assert!(sentinel.observe(&ev).is_none());
    }
    assert!(sentinel.blacklist.is_empty());

    let first = run("flood");
    let logged: Vec<u8> = first.pbx.sentinel.logged_alerts().map(|a| a.level).collect();
    assert!(!logged.is_empty());
    assert!(logged.iter().all(|l| (8..=15).contains(l)), "{logged:?}");
    let log = first.pbx.sentinel.alert_log();
    assert_eq!(log.lines().count(), logged.len());
    assert_eq!(run("flood").pbx.sentinel.alert_log(), log);
}

// 5. The flood attacker is cut off while legitimate calls complete.
fn flood_selectivity() {
    let run = run("flood");
    let attacker = Ipv4Addr::new(10, 66, 0, 7);
    let entry = run.pbx.sentinel.blacklist.entries.get(&attacker).expect("attacker blacklisted");
    // The packet that tipped the window is delivered at `since`; nothing after it is.
    let from_attacker: Vec<SimTime> = run.pbx.sip_deliveries().iter().filter(|(_, src)| *src == attacker).map(|(at, _)| *at).collect();
    assert_eq!(from_attacker.iter().filter(|at| **at == entry.since).count(), 1);
    assert_eq!(from_attacker.last(), Some(&entry.since), "{from_attacker:?}");
    assert!(run.pbx.sip_deliveries().iter().any(|(_, src)| *src == attacker));
    assert_eq!(run.pbx.final_metrics().get("delivered_while_blacklisted"), 0);

    let harish = run.transcript("harish");
    let register = ["> REGISTER", "< 401 REGISTER", "> REGISTER", "< 200 REGISTER"];
    let call = ["> INVITE", "< 200 INVITE", "> ACK", "> BYE", "< 200 BYE"];
    let want: Vec<&str> = register.iter().chain(call.iter()).chain(call.iter()).copied().collect();
    assert_eq!(harish, want);
    let bob = run.transcript("bob");
    assert!(bob.iter().filter(|l| *l == "> 200 BYE").count() == 2, "{bob:?}");
    assert_eq!(run.pbx.final_metrics().get("calls_completed"), 2);
    // The second call happens after the attacker was blocked.
    let harish_ip = Ipv4Addr::new(192, 168, 100, 36);
    assert!(run.pbx.sip_deliveries().iter().any(|(at, src)| *src == harish_ip && *at > entry.since));
}

// 6. Attendance IVR and unanswered calls.
fn ivr_trace() {
    let mut store = AttendanceStore::default();
    store.insert("1001", "2222", 87).unwrap();
    let mut grants = GrantTable::new();
    grants.apply(&ivr_grant());
    let principal = Principal::ivr();
    let gw = StoreGateway { store: &store, grants: &grants, principal: &principal };

    let drive = |inputs: &[&str]| {
        let (mut actions, mut s) = run_ivr(&IvrSession::default(), IvrEvent::Start, &gw).unwrap();
        let mut said_before_verify = false;
        for input in inputs {
            let (more, next) = run_ivr(&s, IvrEvent::Digits(input.to_string()), &gw).unwrap();
            if more.iter().any(|a| matches!(a, Action::SayDigits(_))) && !next.verifications.contains(&true) {
                said_before_verify = true;
            }
            actions.extend(more);
            s = next;
        }
        assert!(!said_before_verify);
        (actions, s)
    };

    let (actions, _) = drive(&["1001", "2222"]);
    let said: Vec<_> = actions.iter().filter_map(|a| if let Action::SayDigits(d) = a { Some(d.as_str()) } else { None }).collect();
    assert_eq!(said, ["87"]);

    let (actions, s) = drive(&["1001", "9999", "1001", "9998", "1001", "9997"]);
    assert!(!actions.iter().any(|a| matches!(a, Action::SayDigits(_))));
    let bad = actions.iter().filter(|a| **a == Action::Play(prompts::BAD_PASSWORD.into())).count();
    assert_eq!(bad, 3);
    assert_eq!(actions.last(), Some(&Action::Hangup));
    assert_eq!(s.verifications, [false, false, false]);

    let ivr = run("ivr");
    let mut said: Vec<String> = ivr.pbx.calls().flat_map(|(_, c)| c.said.clone()).collect();
    said.sort();
    assert_eq!(said, ["64", "87"]);

    let na = run("no-answer");
    let m = na.pbx.final_metrics();
    assert_eq!(m.get("voicemail_deposits"), 1);
    assert_eq!(m.get("notifications_voicemail_notice"), 1);
    assert_eq!(na.pbx.sink.count(Category::VoicemailNotice), 1);
}

// 7. Media stream shape.
fn rtp_pattern() {
    let mut session = MediaSession::new(0x02ED_CFCE, 9933, 3_550_780);
    let frames: Vec<RtpFrame> = (0..50).map(|i| session.next_frame(vec![i as u8; 33])).collect();
    let known = RtpFrame { marker: false, payload: Vec::new(), ..frames[0].clone() };
    assert_eq!(hex(&known.encode()), "800326cd00362e3c02edcfce");
    assert!(frames[0].marker && !frames[1].marker);
    assert_eq!(frames[1].timestamp, 3_550_940);
    let mut monitor = StreamMonitor::default();
    for w in frames.windows(2) {
        assert_eq!(w[1].seq, w[0].seq.wrapping_add(1));
        assert_eq!(w[1].timestamp, w[0].timestamp.wrapping_add(160));
    }
    for f in &frames {
        assert_eq!(&RtpFrame::decode(&f.encode()).unwrap(), f);
        assert!(monitor.observe(f));
    }
    assert_eq!((monitor.frames, monitor.discontinuities), (50, 0));
}

// 8. Tunnel leasing, sealing and cipher vectors.
fn tunnel() {
    assert_eq!(hex(&Rc4State::new(&[1, 2, 3, 4, 5]).keystream(16)), "b2396305f03dc027ccc3524a0a1118a8");
    let key: Vec<u8> = (1..=16).collect();
    assert_eq!(hex(&Rc4State::new(&key).keystream(16)), "9ac7cc9a609d1ef7b2932899cde41b97");
    assert_eq!(hex(&derive_key("harish", "1234")), "8c1b326093b88e79a2c9d06f938bc551");
    assert_eq!(hex(&Rc4State::new(&derive_key("harish", "1234")).keystream(16)), "e15f24b59fb6934bf512f3678798940b");

    let conf = repo().join("scenarios/conf");
    let (cfg, creds) = parse_vpn_config(
        &std::fs::read_to_string(conf.join("pptpd.conf")).unwrap(),
        &std::fs::read_to_string(conf.join("chap-secrets")).unwrap(),
    )
    .unwrap();
    let lowest = cfg.pool().next().unwrap();
    let mut server = TunnelServer::new(cfg, creds);
    assert!(server.establish("harish", "wrong", Ipv4Addr::new(203, 0, 113, 5), SimTime::ZERO).is_err());
    let leased = server.establish("harish", "vpnpass", Ipv4Addr::new(203, 0, 113, 5), SimTime::ZERO).unwrap();
    assert_eq!(leased, lowest);
    let second = server.establish("bob", "b0bvpn", Ipv4Addr::new(203, 0, 113, 6), SimTime::ZERO).unwrap();
    assert_eq!(u32::from(second), u32::from(lowest) + 1);

    let mut client = TunnelClient::new("harish", "vpnpass", leased);
    let session = server.session(leased).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    for _ in 0..100 {
        let len = rng.gen_range(0..400);
        let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        assert_eq!(session.open(&client.seal(&payload)).unwrap(), payload);
    }

    let vpn = run("vpn");
    let sealed: Vec<_> = vpn.pbx.capture().iter().filter(|c| c.proto == Proto::Gre).collect();
    assert!(!sealed.is_empty());
    assert!(sealed.iter().all(|c| !c.bytes.windows(8).any(|w| w == b"REGISTER")));
    assert!(vpn.transcript("harish").iter().any(|l| l == "< 200 REGISTER"));
}

// 9. Privilege table.
fn acl() {
    let who = Principal::new("abc", "10.0.0.5");
    let mut table = GrantTable::new();
    for stmt in [
        "GRANT INSERT,UPDATE, ALTER on p.q TO 'abc'@10.0.0.5 IDENTIFIED BY 'abc';",
        "GRANT ALL on *.* TO 'abc'@10.0.0.5 IDENTIFIED BY 'abc';",
        "REVOKE ALL on *.* TO 'abc'@10.0.0.5 IDENTIFIED BY 'abc';",
        "REVOKE DELETE, DROP, ALTER on x.y to 'abc'@10.0.0.5 IDENTIFIED BY 'abc';",
    ] {
        table.apply(&parse_statement(stmt).unwrap());
    }
    assert!(table.check(&who, Privilege::Insert, &Scope::table("p", "q")));
    assert!(!table.check(&who, Privilege::Delete, &Scope::table("p", "q")));

    let mut table = GrantTable::new();
    table.apply(&parse_statement("GRANT ALL on *.* TO 'abc'@10.0.0.5 IDENTIFIED BY 'abc'").unwrap());
    table.apply(&parse_statement("REVOKE DELETE, DROP, ALTER on x.y to 'abc'@10.0.0.5 IDENTIFIED BY 'abc'").unwrap());
    assert!(!table.check(&who, Privilege::Delete, &Scope::table("x", "y")));
    assert!(table.check(&who, Privilege::Delete, &Scope::table("p", "q")));

    for name in SCENARIOS {
        let r = run(name);
        for p in Privilege::ACCESS.into_iter().filter(|p| p.is_mutating()) {
            for obj in [Scope::table("attendance", "students"), Scope::database("attendance"), Scope::all()] {
                assert!(!r.pbx.grants.check(&Principal::ivr(), p, &obj), "{name}: {p} on {obj}");
            }
        }
    }

    let principals = [Principal::new("a", "10.0.0.1"), Principal::new("b", "10.0.0.2")];
    let privs = [Privilege::Select, Privilege::Delete, Privilege::Update];
    let scopes = [Scope::all(), Scope::database("x"), Scope::database("p"), Scope::table("x", "y"), Scope::table("x", "z"), Scope::table("p", "q")];
    let objects = [Scope::table("x", "y"), Scope::table("x", "z"), Scope::table("p", "q"), Scope::table("p", "r")];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0009);
    for round in 0..500 {
        let mut table = GrantTable::new();
        let mut granted_only = true;
        let mut statements = Vec::new();
        for _ in 0..rng.gen_range(1..10) {
            let revoke = rng.gen_bool(0.35);
            granted_only &= !revoke;
            let stmt = format!(
                "{} {} ON {} {} '{}'@{}",
                if revoke { "REVOKE" } else { "GRANT" },
                privs[rng.gen_range(0..privs.len())],
                scopes[rng.gen_range(0..scopes.len())],
                if revoke { "FROM" } else { "TO" },
                principals[rng.gen_range(0..2)].user,
                principals[rng.gen_range(0..2)].host,
            );
            let stmt = parse_statement(&stmt).unwrap();
            table.apply(&stmt);
            statements.push(stmt);
        }
        let grants: Vec<_> = table.grants().cloned().collect();
        let shadows: Vec<_> = table.shadows().cloned().collect();
        for who in &principals {
            for &p in &privs {
                for obj in &objects {
                    let covering = |set: &[(Principal, Privilege, Scope)]| -> Vec<u8> {
                        set.iter().filter(|(w, q, s)| w == who && *q == p && s.covers(obj)).map(|(_, _, s)| s.specificity()).collect()
                    };
                    let masks = covering(&shadows);
                    let want = covering(&grants).iter().any(|g| masks.iter().all(|m| m < g));
                    assert_eq!(table.check(who, p, obj), want, "round {round}: {who} {p} {obj}");
                    if granted_only {
                        let stated = statements.iter().any(|s| &s.principal == who && s.privileges.contains(&p) && s.scope.covers(obj));
                        assert_eq!(want, stated, "round {round}");
                    }
                }
            }
        }
    }
}

// 10. Same inputs, same bytes.
fn determinism() {
    for name in SCENARIOS {
        let a = run(name).pbx.artifacts();
        let b = run(name).pbx.artifacts();
        for file in ["alerts.log", "mail.journal", "voicemail.journal", "metrics.txt"] {
            assert!(a.contains_key(file), "{name}: {file}");
            assert_eq!(a[file], b[file], "{name}: {file}");
        }
        assert_eq!(a, b, "{name}");
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 10] = [
        ("configuration corpus and startup refusal", config_corpus),
        ("firewall matrix against chain walk", firewall_matrix),
        ("rate threshold boundary and window recount", rate_detector),
        ("classification coverage and alert log", classification),
        ("flood selectivity", flood_selectivity),
        ("IVR and voicemail traces", ivr_trace),
        ("RTP stream pattern", rtp_pattern),
        ("tunnel leasing, sealing and cipher vectors", tunnel),
        ("privilege table", acl),
        ("determinism across runs", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = started.elapsed();
        match outcome {
            Ok(()) => println!("criterion {:>2}: PASS  {name} ({})", i + 1, ms(elapsed)),
            Err(e) => {
                failed += 1;
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
                println!("criterion {:>2}: FAIL  {name}: {}", i + 1, msg.lines().next().unwrap_or(""));
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ms(d: Duration) -> String {
    format!("{} ms", d.as_millis())
}
