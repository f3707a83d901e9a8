//! Real-socket mode: one UDP socket feeding the same pipeline the harness
//! drives, with virtual time taken from the wall clock.

use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use minipbx::acl::{ivr_grant, AttendanceStore};
use minipbx::pbx::{Pbx, PbxConfig, Timer, VirtualClock};
use minipbx::pktfilter::{Packet, Proto};
use minipbx::SimTime;

const POLL: Duration = Duration::from_millis(50);

pub struct Options {
    pub bind: Ipv4Addr,
    pub port: u16,
    pub duration: Option<f64>,
    pub voicemail_journal: Option<PathBuf>,
    /// Tab-separated student records: id, password MD5, attendance.
    pub attendance_db: Option<PathBuf>,
}

fn load_store(path: Option<&Path>) -> Result<AttendanceStore, String> {
    let Some(path) = path else { return Ok(AttendanceStore::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    AttendanceStore::load(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn serve(config: PbxConfig, opts: &Options, state_dir: &Path) -> ExitCode {
    let store = match load_store(opts.attendance_db.as_deref()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("pbxctl: {e}");
            return ExitCode::from(2);
        }
    };
    let mut pbx = match Pbx::new(&config, store) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("pbxctl: {e}");
            return ExitCode::from(2);
        }
    };
    // Privileges granted with `pbxctl db` carry over into the running server.
    // Without a journal the IVR gets its stock read-only grant.
    let journal = std::fs::read_to_string(state_dir.join("grants")).unwrap_or_else(|_| format!("{}\n", ivr_grant()));
    for line in journal.lines().filter(|l| !l.trim().is_empty()) {
        if let Err(e) = pbx.apply_statement(line) {
            eprintln!("pbxctl: grants: {e}");
            return ExitCode::from(2);
        }
    }
    let socket = match UdpSocket::bind((opts.bind, opts.port)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("pbxctl: binding {}:{}: {e}", opts.bind, opts.port);
            return ExitCode::FAILURE;
        }
    };
    socket.set_read_timeout(Some(POLL)).expect("nonzero timeout");
    let local = socket.local_addr().expect("bound socket has an address");
    pbx.start();
    println!("listening on {local}");

    let started = Instant::now();
    let deadline = opts.duration.map(Duration::from_secs_f64);
    let mut timers: VirtualClock<Timer> = VirtualClock::new();
    let mut buf = [0u8; 65_535];
    loop {
        let elapsed = started.elapsed();
        if deadline.is_some_and(|d| elapsed >= d) {
            break;
        }
        let now = SimTime::from_micros(elapsed.as_micros() as u64).max(pbx.now());
        match socket.recv_from(&mut buf) {
            Ok((n, SocketAddr::V4(from))) => {
                // The socket may sit on any port; inside the pipeline it is the SIP port.
                let packet = Packet::udp(*from.ip(), from.port(), pbx.sip_port(), buf[..n].to_vec(), now);
                let outcome = pbx.dispatch(packet);
                log::debug!("{from}: {outcome:?}");
            }
            Ok((_, from)) => log::warn!("ignoring datagram from {from}"),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => log::warn!("receive failed: {e}"),
        }
        pbx.set_now(now);
        for (at, t) in pbx.take_timers() {
            timers.schedule(at, t);
        }
        while let Some((_, t)) = timers.pop_until(now) {
            pbx.fire(t);
        }
        for out in pbx.take_outbound() {
            if out.proto != Proto::Udp {
                continue;
            }
            let dst = SocketAddrV4::new(*out.dst.ip(), out.dst.port());
            if let Err(e) = socket.send_to(&out.payload, dst) {
                log::warn!("send to {dst} failed: {e}");
            }
        }
        pbx.take_media_starts();
    }
    pbx.stop();
    let mut artifacts = pbx.artifacts();
    if let Some(path) = &opts.voicemail_journal {
        if let Err(e) = std::fs::write(path, artifacts.remove("voicemail.journal").unwrap_or_default()) {
            eprintln!("pbxctl: writing {}: {e}", path.display());
        }
    }
    if let Err(e) = std::fs::create_dir_all(state_dir) {
        eprintln!("pbxctl: creating {}: {e}", state_dir.display());
        return ExitCode::FAILURE;
    }
    for (name, body) in artifacts {
        if let Err(e) = std::fs::write(state_dir.join(name), body) {
            eprintln!("pbxctl: writing {name}: {e}");
        }
    }
    ExitCode::SUCCESS
}
