use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::{BufRead, BufReader};
use std::time::Duration;

fn conf_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/conf")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.scn"))
}

fn pbxctl(state: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbxctl")).arg("--state-dir").arg(state).args(args).output().expect("spawn pbxctl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn conf_args(extensions: &Path) -> Vec<String> {
    let c = conf_dir();
    vec![
        "--sip-conf".into(),
        c.join("sip.conf").display().to_string(),
        "--extensions-conf".into(),
        extensions.display().to_string(),
        "--voicemail-conf".into(),
        c.join("voicemail.conf").display().to_string(),
    ]
}

#[test]
fn validate_accepts_the_sample_configuration() {
    let state = tempfile::tempdir().unwrap();
    let args = conf_args(&conf_dir().join("extensions.conf"));
    let mut argv = vec!["validate"];
    argv.extend(args.iter().map(String::as_str));
    let out = pbxctl(state.path(), &argv);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unmatched_peer_context_exits_2() {
    let state = tempfile::tempdir().unwrap();
    let ext = state.path().join("extensions.conf");
    std::fs::write(&ext, "[lobby]\nexten => 100,1,Dial(SIP/harish,20)\n").unwrap();
    let args = conf_args(&ext);
    for cmd in ["validate", "daemon"] {
        let mut argv = vec![cmd];
        argv.extend(args.iter().map(String::as_str));
        let out = pbxctl(state.path(), &argv);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("context lobby unmatched"), "{cmd}");
    }
}

#[test]
fn run_writes_state_files_and_reports_metrics() {
    let state = tempfile::tempdir().unwrap();
    let out = pbxctl(state.path(), &["run", scenario("happy-call").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("calls_completed 1"));
    for f in ["firewall.rules", "blacklist.tsv", "alerts.log", "grants", "metrics.txt", "transcripts.txt"] {
        assert!(state.path().join(f).exists(), "{f}");
    }
}

#[test]
fn failing_assertion_exits_1() {
    let state = tempfile::tempdir().unwrap();
    let scn = state.path().join("bad.scn");
    let conf = conf_dir();
    std::fs::write(
        &scn,
        format!(
            "name bad\nconfig sip-conf {c}/sip.conf\nconfig extensions-conf {c}/extensions.conf\n\
             config voicemail-conf {c}/voicemail.conf\nclient harish 192.168.100.36\n\
             AT 1 assert registered harish\n",
            c = conf.display()
        ),
    )
    .unwrap();
    let out = pbxctl(state.path(), &["run", scn.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn firewall_edits_round_trip() {
    let state = tempfile::tempdir().unwrap();
    let s = state.path();
    assert!(pbxctl(s, &["fw", "insert", "-p", "tcp", "--dport", "22", "-j", "ACCEPT"]).status.success());
    let listed = stdout(&pbxctl(s, &["fw", "list"]));
    assert!(listed.lines().nth(1).unwrap().ends_with("-p tcp --dport 22 -j ACCEPT"), "{listed}");

    assert!(pbxctl(s, &["fw", "delete", "-p", "tcp", "--dport", "22", "-j", "ACCEPT"]).status.success());
    assert!(!stdout(&pbxctl(s, &["fw", "list"])).contains("--dport 22 "));
    assert_eq!(pbxctl(s, &["fw", "delete", "-p", "tcp", "--dport", "22", "-j", "ACCEPT"]).status.code(), Some(1));

    assert!(pbxctl(s, &["fw", "policy", "DROP"]).status.success());
    assert!(stdout(&pbxctl(s, &["fw", "list"])).starts_with("policy DROP"));
    assert!(pbxctl(s, &["fw", "reset"]).status.success());
    assert!(stdout(&pbxctl(s, &["fw", "list"])).starts_with("policy ACCEPT"));
}

#[test]
fn unblock_lifts_blacklist_entry_and_drop_rule() {
    let state = tempfile::tempdir().unwrap();
    let s = state.path();
    assert!(pbxctl(s, &["run", scenario("flood").to_str().unwrap()]).status.success());
    assert!(stdout(&pbxctl(s, &["sentinel", "status"])).starts_with("blacklisted 1"));
    assert!(stdout(&pbxctl(s, &["fw", "list"])).contains("-s 10.66.0.7/32 -j DROP"));

    assert!(pbxctl(s, &["sentinel", "unblock", "10.66.0.7"]).status.success());
    assert!(stdout(&pbxctl(s, &["sentinel", "status"])).starts_with("blacklisted 0"));
    assert!(!stdout(&pbxctl(s, &["fw", "list"])).contains("10.66.0.7"));
    assert_eq!(pbxctl(s, &["sentinel", "unblock", "10.66.0.7"]).status.code(), Some(1));

    let mail = stdout(&pbxctl(s, &["mail", "list", "--category", "admin-alert"]));
    assert!(mail.contains("10.66.0.7"), "{mail}");
}

#[test]
fn grants_persist_between_invocations() {
    let state = tempfile::tempdir().unwrap();
    let s = state.path();
    let ok = pbxctl(s, &["db", "grant", "SELECT,INSERT", "ON", "attendance.*", "TO", "ivr@127.0.0.1"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(pbxctl(s, &["db", "revoke", "INSERT", "ON", "attendance.students", "FROM", "ivr@127.0.0.1"]).status.success());

    let check = |p: &str, o: &str| pbxctl(s, &["db", "check", "ivr@127.0.0.1", p, o]).status.code();
    assert_eq!(check("SELECT", "attendance.students"), Some(0));
    assert_eq!(check("INSERT", "attendance.students"), Some(1));
    assert_eq!(check("INSERT", "attendance.courses"), Some(0));
    assert_eq!(check("SELECT", "payroll.staff"), Some(1));
}

#[test]
fn vpn_kick_removes_session() {
    let state = tempfile::tempdir().unwrap();
    let s = state.path();
    assert!(pbxctl(s, &["run", scenario("vpn").to_str().unwrap()]).status.success());
    assert!(stdout(&pbxctl(s, &["vpn", "sessions"])).contains("harish"));
    assert!(pbxctl(s, &["vpn", "kick", "harish"]).status.success());
    assert!(!stdout(&pbxctl(s, &["vpn", "sessions"])).contains("harish"));
    assert_eq!(pbxctl(s, &["vpn", "kick", "harish"]).status.code(), Some(1));
}

#[test]
fn daemon_challenges_register_over_udp() {
    let state = tempfile::tempdir().unwrap();
    let args = conf_args(&conf_dir().join("extensions.conf"));
    let mut child = Command::new(env!("CARGO_BIN_EXE_pbxctl"))
        .arg("--state-dir")
        .arg(state.path())
        .arg("daemon")
        .args(&args)
        .args(["--port", "0", "--bind", "127.0.0.1", "--duration", "5"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("banner").to_string();

    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.set_read_timeout(Some(Duration::from_secs(3))).unwrap();
    let contact = sock.local_addr().unwrap();
    let msg = format!(
        "REGISTER sip:harish@192.168.100.37 SIP/2.0\r\nCall-ID: udp-1\r\nCSeq: 1 REGISTER\r\nContact: <sip:harish@{contact}>\r\n\r\n"
    );
    sock.send_to(msg.as_bytes(), &addr).unwrap();
    let mut buf = [0u8; 4096];
    let (n, _) = sock.recv_from(&mut buf).unwrap();
    let reply = String::from_utf8_lossy(&buf[..n]);
    assert!(reply.starts_with("SIP/2.0 401"), "{reply}");
    assert!(reply.contains("Nonce: "), "{reply}");
    child.kill().ok();
    child.wait().unwrap();
}
