//! Deterministic hostile traffic.

use std::net::SocketAddrV4;
use std::time::Duration;

use crate::pktfilter::{Packet, Proto};
use crate::sipnode::{authorization_header, compute_digest, Method, SipMessage, SipUri};
use crate::SimTime;

pub const SCAN_SPACING: Duration = Duration::from_millis(10);
pub const BRUTE_FORCE_SPACING: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackKind {
    /// `n` unauthenticated REGISTERs for `user`, evenly spread over `window`.
    RegisterFlood { n: u32, window: Duration, user: String },
    /// One TCP probe per port, ascending.
    PortScan { lo: u16, hi: u16 },
    /// REGISTERs for `peer` carrying wrong digests.
    BruteForcePeer { peer: String, attempts: u32 },
    /// Calls to a voicemail-login extension, each keying a wrong box password.
    /// Guesses run 0000, 0001, ... skipping `avoid`.
    BruteForceBox { exten: String, attempts: u32, avoid: Option<String> },
}

fn sip_packet(src: SocketAddrV4, server: SocketAddrV4, at: SimTime, msg: &SipMessage) -> Packet {
    Packet::udp(*src.ip(), src.port(), server.port(), msg.encode(), at)
}

fn box_guesses(avoid: Option<&str>) -> impl Iterator<Item = String> + '_ {
    (0u32..).map(|n| format!("{n:04}")).filter(move |g| Some(g.as_str()) != avoid)
}

/// The packets an attack puts on the wire, in arrival order starting at `start`.
pub fn attack_generate(kind: &AttackKind, src: SocketAddrV4, server: SocketAddrV4, start: SimTime) -> Vec<Packet> {
    let host = server.ip().to_string();
    match kind {
        AttackKind::RegisterFlood { n, window, user } => {
            let n = u64::from(*n);
            let span = window.as_micros() as u64;
            (0..n)
                .map(|i| {
                    let offset = if n > 1 { i * span / (n - 1) } else { 0 };
                    let msg = SipMessage::request(Method::Register, SipUri::new(user.as_str(), host.as_str(), None))
                        .with_header("Call-ID", format!("flood-{}-{i}", src.ip()))
                        .with_header("CSeq", format!("{} REGISTER", i + 1))
                        .with_header("Contact", format!("<sip:{user}@{src}>"));
                    sip_packet(src, server, start + Duration::from_micros(offset), &msg)
                })
                .collect()
        }
        AttackKind::PortScan { lo, hi } => (*lo..=*hi)
            .enumerate()
            .map(|(i, port)| Packet::tcp(*src.ip(), src.port(), port, Vec::new(), start + SCAN_SPACING * i as u32))
            .collect(),
        AttackKind::BruteForcePeer { peer, attempts } => (0..*attempts)
            .map(|i| {
                let nonce = format!("guess{i:04}");
                let response = compute_digest(peer, &format!("wrong{i}"), &nonce);
                let msg = SipMessage::request(Method::Register, SipUri::new(peer.as_str(), host.as_str(), None))
                    .with_header("Call-ID", format!("bf-{}-{i}", src.ip()))
                    .with_header("CSeq", format!("{} REGISTER", i + 1))
                    .with_header("Contact", format!("<sip:{peer}@{src}>"))
                    .with_header("Authorization", authorization_header(peer, &nonce, &response));
                sip_packet(src, server, start + BRUTE_FORCE_SPACING * i, &msg)
            })
            .collect(),
        AttackKind::BruteForceBox { exten, attempts, avoid } => box_guesses(avoid.as_deref())
            .take(*attempts as usize)
            .enumerate()
            .map(|(i, guess)| {
                let msg = SipMessage::request(Method::Invite, SipUri::new(exten.as_str(), host.as_str(), None))
                    .with_header("Call-ID", format!("vmbf-{}-{i}", src.ip()))
                    .with_header("CSeq", "1 INVITE")
                    .with_header("Contact", format!("<sip:intruder@{src}>"))
                    .with_header("X-Dtmf", format!("{guess}#"));
                sip_packet(src, server, start + BRUTE_FORCE_SPACING * i as u32, &msg)
            })
            .collect(),
    }
}

impl AttackKind {
    pub fn proto(&self) -> Proto {
        match self {
            AttackKind::PortScan { .. } => Proto::Tcp,
            _ => Proto::Udp,
        }
    }
}
