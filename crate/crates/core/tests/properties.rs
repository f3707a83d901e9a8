use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use minipbx::acl::{parse_statement, GrantTable, Principal, Privilege, Scope};
use minipbx::confkit::{
    parse_extensions_conf, parse_sip_conf, validate_cross, write_sip_conf, MailboxRef, PeerEntry, VoicemailConf,
};
use minipbx::dialplan::{compile, Action, Cursor, StepInput};
use minipbx::media::{MediaSession, RtpFrame, SsrcAllocator};
use minipbx::pbx::VirtualClock;
use minipbx::pktfilter::{Chain, ChainOp, FilterRule, Packet, Proto, Verdict};
use minipbx::sentinel::RateDetector;
use minipbx::sentinel::RateRule;
use minipbx::sipnode::{Method, SipMessage, SipUri, StatusCode};
use minipbx::tunnel::{Rc4State, TunnelClient, TunnelServer};
use minipbx::SimTime;
use proptest::prelude::*;

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,7}"
}

fn header_value() -> impl Strategy<Value = String> {
    "[A-Za-z0-9<>@:;=. -]{0,24}".prop_map(|s| s.trim().to_string())
}

proptest! {
    #[test]
    fn sip_request_round_trips(
        method in prop::sample::select(Method::ALL.to_vec()),
        user in ident(),
        host in "[a-z0-9.]{1,15}",
        port in prop::option::of(1u16..),
        headers in prop::collection::vec(("X-[A-Z][a-z]{1,6}", header_value()), 0..6),
        body in prop::collection::vec(any::<u8>(), 0..64),
    ) {
        let mut msg = SipMessage::request(method, SipUri::new(user, host, port)).with_header("Call-ID", "abc").with_body(body);
        for (n, v) in headers {
            msg.set_header(&n, v);
        }
        prop_assert_eq!(SipMessage::decode(&msg.encode()).unwrap(), msg);
    }

    #[test]
    fn sip_response_round_trips(code in prop::sample::select(StatusCode::ALL.to_vec()), cseq in 1u32..10_000) {
        let msg = SipMessage::status(code).with_header("CSeq", format!("{cseq} REGISTER"));
        let back = SipMessage::decode(&msg.encode()).unwrap();
        prop_assert_eq!(back.status_code(), Some(code));
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn rtp_round_trips(pt in 0u8..128, marker: bool, seq: u16, ts: u32, ssrc: u32, payload in prop::collection::vec(any::<u8>(), 0..200)) {
        let frame = RtpFrame { payload_type: pt, marker, seq, timestamp: ts, ssrc, payload };
        prop_assert_eq!(RtpFrame::decode(&frame.encode()).unwrap(), frame);
    }

    #[test]
    fn rtp_timestamp_span(seq: u16, ts in 0u32..1_000_000, n in 1usize..500) {
        let mut s = MediaSession::new(7, seq, ts);
        let stamps: Vec<u32> = (0..n).map(|_| s.next_frame(Vec::new()).timestamp).collect();
        let span = stamps.iter().max().unwrap() - stamps.iter().min().unwrap();
        prop_assert_eq!(span as usize, 160 * (n - 1));
    }

    #[test]
    fn ssrcs_are_unique_per_run(seed: u64, n in 1usize..300) {
        let mut alloc = SsrcAllocator::new(seed);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..n {
            prop_assert!(seen.insert(alloc.open_session().ssrc));
        }
    }
}

fn rule() -> impl Strategy<Value = FilterRule> {
    let proto = prop::sample::select(vec![Proto::Tcp, Proto::Udp, Proto::Icmp, Proto::Any]);
    let verdict = prop::sample::select(vec![Verdict::Accept, Verdict::Drop, Verdict::Reject]);
    (proto, prop::option::of(0u16..8), prop::option::of(0u8..4), verdict).prop_map(|(proto, dport, src, verdict)| {
        let dport = dport.filter(|_| matches!(proto, Proto::Tcp | Proto::Udp));
        FilterRule::new(proto, dport, src.map(|h| Ipv4Addr::new(10, 0, 0, h)), verdict).unwrap()
    })
}

fn packet() -> impl Strategy<Value = Packet> {
    (prop::sample::select(vec![Proto::Tcp, Proto::Udp, Proto::Icmp]), 0u16..8, 0u8..4).prop_map(|(proto, dport, h)| Packet {
        proto,
        ..Packet::udp(Ipv4Addr::new(10, 0, 0, h), 5000, dport, Vec::new(), SimTime::ZERO)
    })
}

fn scan(chain: &Chain, p: &Packet) -> Verdict {
    for r in &chain.rules {
        let proto_ok = r.proto == Proto::Any || r.proto == p.proto;
        let port_ok = match r.dport {
            None => true,
            Some(d) => matches!(p.proto, Proto::Tcp | Proto::Udp) && d == p.dport,
        };
        let src_ok = r.src.is_none_or(|s| s == p.src);
        if proto_ok && port_ok && src_ok {
            return r.verdict;
        }
    }
    chain.default_policy
}

proptest! {
    #[test]
    fn first_match_agrees_with_scan(rules in prop::collection::vec(rule(), 0..50), policy_drop: bool, packets in prop::collection::vec(packet(), 1..40)) {
        let chain = Chain { rules, default_policy: if policy_drop { Verdict::Drop } else { Verdict::Accept }, ..Chain::default() };
        for p in &packets {
            prop_assert_eq!(chain.evaluate(p), scan(&chain, p));
        }
    }

    #[test]
    fn head_drop_blocks_source_only(rules in prop::collection::vec(rule(), 0..30), h in 0u8..4, packets in prop::collection::vec(packet(), 1..40)) {
        let before = Chain { rules, ..Chain::default() };
        let mut after = before.clone();
        let blocked = Ipv4Addr::new(10, 0, 0, h);
        after.mutate(ChainOp::InsertHead(FilterRule::drop_source(blocked)));
        for p in &packets {
            if p.src == blocked {
                prop_assert_eq!(after.evaluate(p), Verdict::Drop);
            } else {
                prop_assert_eq!(after.evaluate(p), before.evaluate(p));
            }
        }
    }

    #[test]
    fn chain_dump_reloads(rules in prop::collection::vec(rule(), 0..20)) {
        let chain = Chain { rules, ..Chain::default() };
        prop_assert_eq!(Chain::load(&chain.dump()).unwrap(), chain);
    }

    #[test]
    fn window_matches_recount(gaps in prop::collection::vec((0u64..15_000, 0u8..3), 1..600), threshold in 1u32..15) {
        let rule = RateRule::new(threshold, Duration::from_secs(60)).unwrap();
        let mut detector = RateDetector::new(rule);
        let mut seen: BTreeMap<u8, Vec<u64>> = BTreeMap::new();
        let mut t = 0u64;
        for (gap, h) in gaps {
            t += gap;
            let (count, _) = detector.record(Ipv4Addr::new(10, 0, 0, h), SimTime::from_millis(t));
            let past = seen.entry(h).or_default();
            past.push(t);
            let want = past.iter().filter(|at| t - **at < 60_000).count() as u32;
            prop_assert_eq!(count, want);
        }
    }
}

fn statement() -> impl Strategy<Value = String> {
    let privs = prop::sample::subsequence(vec!["SELECT", "INSERT", "UPDATE", "DELETE"], 1..=4);
    let scope = prop::sample::select(vec!["*.*", "x.*", "p.*", "x.y", "p.q"]);
    (any::<bool>(), privs, scope, prop::sample::select(vec!["a", "b"])).prop_map(|(revoke, privs, scope, user)| {
        let (verb, dir) = if revoke { ("REVOKE", "FROM") } else { ("GRANT", "TO") };
        format!("{verb} {} ON {scope} {dir} '{user}'@10.0.0.1", privs.join(","))
    })
}

fn objects() -> Vec<Scope> {
    ["x.y", "x.z", "p.q", "p.r"].iter().map(|s| s.parse().unwrap()).collect()
}

proptest! {
    #[test]
    fn check_requires_covering_grant(stmts in prop::collection::vec(statement(), 0..12)) {
        let mut table = GrantTable::new();
        for s in &stmts {
            table.apply(&parse_statement(s).unwrap());
        }
        for user in ["a", "b", "c"] {
            let who = Principal::new(user, "10.0.0.1");
            for p in [Privilege::Select, Privilege::Insert, Privilege::Update, Privilege::Delete] {
                for obj in objects() {
                    let covered = table.grants().any(|(w, q, s)| *w == who && *q == p && s.covers(&obj));
                    prop_assert!(covered || !table.check(&who, p, &obj));
                }
            }
        }
    }

    #[test]
    fn grant_then_revoke_restores_table(stmts in prop::collection::vec(statement(), 0..8), privs in prop::sample::subsequence(vec!["SELECT", "DELETE", "ALTER"], 1..=3), scope in prop::sample::select(vec!["*.*", "x.*", "x.y", "q.r"])) {
        let mut table = GrantTable::new();
        for s in &stmts {
            table.apply(&parse_statement(s).unwrap());
        }
        let held: Vec<&str> = privs
            .iter()
            .copied()
            .filter(|p| table.grants().any(|(w, q, s)| w.user == "n" && q.as_str() == *p && s.to_string() == scope))
            .collect();
        prop_assume!(held.is_empty());
        let before = table.clone();
        table.apply(&parse_statement(&format!("GRANT {} ON {scope} TO 'n'@10.0.0.1", privs.join(","))).unwrap());
        table.apply(&parse_statement(&format!("REVOKE {} ON {scope} FROM 'n'@10.0.0.1", privs.join(","))).unwrap());
        prop_assert_eq!(table, before);
    }
}

fn peer() -> impl Strategy<Value = PeerEntry> {
    (ident(), prop::option::of(ident()), prop::option::of("[0-9]{1,6}"), ident(), prop::option::of(("[0-9]{1,4}", ident())))
        .prop_map(|(name, username, secret, context, mailbox)| PeerEntry {
            username,
            secret,
            context,
            mailbox: mailbox.map(|(m, c)| MailboxRef { mailbox: m, context: c }),
            ..PeerEntry::new(name)
        })
}

proptest! {
    #[test]
    fn sip_conf_round_trips(peers in prop::collection::vec(peer(), 0..6)) {
        let mut names = std::collections::BTreeSet::new();
        let peers: Vec<PeerEntry> = peers.into_iter().filter(|p| p.name != "general" && names.insert(p.name.clone())).collect();
        prop_assert_eq!(parse_sip_conf(&write_sip_conf(&peers)).unwrap(), peers);
    }

    #[test]
    fn extensions_keep_file_order(lines in prop::collection::vec(("[0-9]{1,3}", 1u32..20, prop::sample::select(vec!["Hangup()", "Playback(hello)", "SayDigits(42)", "Dial(SIP/bob,20)"])), 1..20)) {
        let text: String = std::iter::once("[office]\n".to_string())
            .chain(lines.iter().map(|(e, p, op)| format!("exten => {e},{p},{op}\n")))
            .collect();
        let doc = parse_extensions_conf(&text).unwrap();
        let got: Vec<(String, u32)> = doc.contexts[0].lines.iter().map(|l| (l.exten.clone(), l.priority)).collect();
        let want: Vec<(String, u32)> = lines.iter().map(|(e, p, _)| (e.clone(), *p)).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(parse_extensions_conf(&doc.to_text()).unwrap(), doc);
    }

    #[test]
    fn validation_ignores_peer_order(peers in prop::collection::vec(peer(), 1..6), ctxs in prop::collection::vec(ident(), 1..4), rot in 0usize..6) {
        let mut names = std::collections::BTreeSet::new();
        let ctxs: Vec<String> = ctxs.into_iter().filter(|c| names.insert(c.clone())).collect();
        let text: String = ctxs.iter().map(|c| format!("[{c}]\nexten => 1,1,Hangup()\n")).collect();
        let doc = parse_extensions_conf(&text).unwrap();
        let vm = VoicemailConf::default();
        let mut rotated = peers.clone();
        rotated.rotate_left(rot % peers.len());
        rotated.reverse();
        prop_assert_eq!(validate_cross(&peers, &doc, &vm).ok(), validate_cross(&rotated, &doc, &vm).ok());
    }
}

proptest! {
    #[test]
    fn dialplan_runs_terminate_and_repeat(ops in prop::collection::vec((1u8..4, 1u32..6, 0u8..5, 1u8..4, 1u32..6), 1..15)) {
        let mut text = String::from("[c]\n");
        let mut used = std::collections::BTreeSet::new();
        for (exten, prio, kind, te, tp) in ops {
            if !used.insert((exten, prio)) {
                continue;
            }
            let op = match kind {
                0 => "Hangup()".to_string(),
                1 => "Playback(x)".to_string(),
                2 => format!("Goto({tp})"),
                3 => format!("Goto({te},{tp})"),
                _ => format!("SayDigits({te}{tp})"),
            };
            text.push_str(&format!("exten => {exten},{prio},{op}\n"));
        }
        let doc = parse_extensions_conf(&text).unwrap();
        let plan = compile(&doc, &Default::default()).unwrap().with_step_budget(200);
        let Some(exten) = ["1", "2", "3"].into_iter().find(|e| plan.has_extension("c", e)) else { return Ok(()) };

        let trace = |plan: &minipbx::dialplan::Dialplan| {
            let mut state = plan.start("c", exten).unwrap();
            let mut out = Vec::new();
            for _ in 0..1_000 {
                if state.is_terminal() {
                    break;
                }
                let before = (state.exten.clone(), state.cursor);
                let step = plan.step(&state, StepInput::Continue);
                out.push((before, step.action.clone()));
                state = step.state;
            }
            (out, state.is_terminal())
        };
        let (first, done) = trace(&plan);
        prop_assert!(done, "run did not terminate");
        prop_assert_eq!(&first, &trace(&plan).0);

        // Within one extension, priorities only move forward unless a Goto moved them.
        for w in first.windows(2) {
            let (((e0, c0), a0), ((e1, c1), _)) = (&w[0], &w[1]);
            if let (Cursor::Priority(p0), Cursor::Priority(p1)) = (c0, c1) {
                if e0 == e1 && !matches!(a0, Action::Goto(_)) {
                    prop_assert!(p1 > p0);
                }
            }
        }
        for ((_, _), a) in &first {
            if let Action::SayDigits(d) = a {
                prop_assert!(d.chars().all(|c| c.is_ascii_digit()));
            }
        }
    }
}

proptest! {
    #[test]
    fn rc4_stays_a_permutation(key in prop::collection::vec(any::<u8>(), 1..64), chunks in prop::collection::vec(0usize..50, 0..10)) {
        let mut rc4 = Rc4State::new(&key);
        prop_assert!(rc4.is_permutation());
        for n in chunks {
            rc4.keystream(n);
            prop_assert!(rc4.is_permutation());
        }
    }

    #[test]
    fn seal_open_is_identity(user in ident(), pw in "[a-z0-9]{1,12}", payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..300), 1..30)) {
        let mut client = TunnelClient::new(&user, &pw, Ipv4Addr::new(192, 168, 100, 200));
        let mut peer = TunnelClient::new(&user, &pw, Ipv4Addr::new(192, 168, 100, 200));
        for p in payloads {
            prop_assert_eq!(peer.open(&client.seal(&p)).unwrap(), p);
        }
    }

    #[test]
    fn leases_are_unique(order in prop::sample::subsequence(vec!["u0", "u1", "u2", "u3", "u4"], 1..=5), kick in 0usize..5) {
        let chap: String = (0..5).map(|i| format!("u{i} pptpd pw{i} *\n")).collect();
        let (cfg, creds) = minipbx::confkit::parse_vpn_config("localip 10.1.0.1\nremoteip 10.1.0.10-10.1.0.14\n", &chap).unwrap();
        let mut server = TunnelServer::new(cfg, creds);
        for u in &order {
            server.establish(u, &format!("pw{}", &u[1..]), Ipv4Addr::new(1, 1, 1, 1), SimTime::ZERO).unwrap();
        }
        let leased: std::collections::BTreeSet<Ipv4Addr> = server.sessions().map(|s| s.leased).collect();
        prop_assert_eq!(leased.len(), order.len());
        let victim = order[kick % order.len()];
        let freed = server.kick(victim).unwrap();
        let again = server.establish(victim, &format!("pw{}", &victim[1..]), Ipv4Addr::new(1, 1, 1, 1), SimTime::ZERO).unwrap();
        prop_assert_eq!(again, freed);
    }

    #[test]
    fn clock_pops_in_time_then_schedule_order(times in prop::collection::vec(0u64..50, 0..60)) {
        let mut clock = VirtualClock::new();
        for (i, t) in times.iter().enumerate() {
            clock.schedule(SimTime::from_millis(*t), i);
        }
        let mut popped = Vec::new();
        while let Some((at, i)) = clock.pop() {
            prop_assert_eq!(clock.now(), at);
            popped.push((at, i));
        }
        let mut want: Vec<(SimTime, usize)> = times.iter().enumerate().map(|(i, t)| (SimTime::from_millis(*t), i)).collect();
        want.sort();
        prop_assert_eq!(popped, want);
    }
}
