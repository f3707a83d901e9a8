//! PPTP-like tunnel: credential check, pool leasing and RC4 sealing.
//!
//! Each session has one cipher state per direction, both keyed with
//! MD5("user:password"). That derivation is simulation grade only.

mod rc4;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

pub use rc4::Rc4State;

use crate::confkit::{CredentialTable, TunnelConfig};
use crate::pktfilter::Proto;
use crate::sipnode::md5_raw;
use crate::SimTime;

/// Control-channel port the client dials to open a session.
pub const PPTP_PORT: u16 = 1723;
pub const FRAME_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TunnelError {
    #[error("bad credentials for {0}")]
    BadCredentials(String),
    #[error("address pool exhausted")]
    PoolExhausted,
    #[error("no live session")]
    SessionClosed,
    #[error("frame shorter than its header")]
    ShortFrame,
    #[error("frame length {declared} does not match {actual} octets of ciphertext")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("checksum mismatch, stream out of step")]
    ChecksumMismatch,
    #[error("malformed inner packet")]
    BadInner,
}

pub fn derive_key(user: &str, password: &str) -> [u8; 16] {
    md5_raw(format!("{user}:{password}").as_bytes())
}

fn checksum(data: &[u8]) -> u32 {
    data.iter().fold(0u32, |acc, b| acc.wrapping_add(u32::from(*b)))
}

/// Frame: 4-octet length, 4-octet additive checksum of the plaintext, then
/// the ciphertext. Only the ciphertext is encrypted.
pub fn seal_with(cipher: &mut Rc4State, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&checksum(payload).to_be_bytes());
    out.extend_from_slice(&cipher.apply(payload));
    out
}

pub fn open_with(cipher: &mut Rc4State, frame: &[u8]) -> Result<Vec<u8>, TunnelError> {
    if frame.len() < FRAME_HEADER_LEN {
        return Err(TunnelError::ShortFrame);
    }
    let declared = u32::from_be_bytes(frame[0..4].try_into().unwrap()) as usize;
    let sum = u32::from_be_bytes(frame[4..8].try_into().unwrap());
    let body = &frame[FRAME_HEADER_LEN..];
    if declared != body.len() {
        return Err(TunnelError::LengthMismatch { declared, actual: body.len() });
    }
    let plain = cipher.apply(body);
    if checksum(&plain) != sum {
        return Err(TunnelError::ChecksumMismatch);
    }
    Ok(plain)
}

/// The datagram carried inside a sealed frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerPacket {
    pub proto: Proto,
    pub sport: u16,
    pub dport: u16,
    pub payload: Vec<u8>,
}

impl InnerPacket {
    pub fn encode(&self) -> Vec<u8> {
        let tag = match self.proto {
            Proto::Tcp => 6,
            Proto::Udp => 17,
            Proto::Icmp => 1,
            Proto::Gre => 47,
            Proto::Any => 0,
        };
        let mut out = vec![tag];
        out.extend_from_slice(&self.sport.to_be_bytes());
        out.extend_from_slice(&self.dport.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<InnerPacket, TunnelError> {
        if buf.len() < 5 {
            return Err(TunnelError::BadInner);
        }
        let proto = match buf[0] {
            6 => Proto::Tcp,
            17 => Proto::Udp,
            1 => Proto::Icmp,
            _ => return Err(TunnelError::BadInner),
        };
        Ok(InnerPacket {
            proto,
            sport: u16::from_be_bytes([buf[1], buf[2]]),
            dport: u16::from_be_bytes([buf[3], buf[4]]),
            payload: buf[5..].to_vec(),
        })
    }
}

/// Server-side state for one client.
#[derive(Debug, Clone)]
pub struct TunnelSession {
    pub user: String,
    pub leased: Ipv4Addr,
    /// The client's real address, the outer source of its frames.
    pub peer: Ipv4Addr,
    pub established_at: SimTime,
    send: Rc4State,
    recv: Rc4State,
}

impl TunnelSession {
    pub fn seal(&mut self, payload: &[u8]) -> Vec<u8> {
        seal_with(&mut self.send, payload)
    }

    pub fn open(&mut self, frame: &[u8]) -> Result<Vec<u8>, TunnelError> {
        open_with(&mut self.recv, frame)
    }
}

/// Client-side mirror of a session.
#[derive(Debug, Clone)]
pub struct TunnelClient {
    pub user: String,
    pub leased: Ipv4Addr,
    send: Rc4State,
    recv: Rc4State,
}

impl TunnelClient {
    pub fn new(user: &str, password: &str, leased: Ipv4Addr) -> Self {
        let key = derive_key(user, password);
        TunnelClient { user: user.to_string(), leased, send: Rc4State::new(&key), recv: Rc4State::new(&key) }
    }

    pub fn seal(&mut self, payload: &[u8]) -> Vec<u8> {
        seal_with(&mut self.send, payload)
    }

    pub fn open(&mut self, frame: &[u8]) -> Result<Vec<u8>, TunnelError> {
        open_with(&mut self.recv, frame)
    }
}

#[derive(Debug, Clone)]
pub struct TunnelServer {
    pub config: TunnelConfig,
    pub creds: CredentialTable,
    sessions: BTreeMap<Ipv4Addr, TunnelSession>,
}

impl TunnelServer {
    pub fn new(config: TunnelConfig, creds: CredentialTable) -> Self {
        TunnelServer { config, creds, sessions: BTreeMap::new() }
    }

    /// Check credentials and lease the lowest free pool address.
    pub fn establish(&mut self, user: &str, password: &str, peer: Ipv4Addr, now: SimTime) -> Result<Ipv4Addr, TunnelError> {
        if self.creds.secret_for(user) != Some(password) {
            return Err(TunnelError::BadCredentials(user.to_string()));
        }
        if let Some(old) = self.sessions.values().find(|s| s.user == user).map(|s| s.leased) {
            self.sessions.remove(&old);
        }
        let leased = self.config.pool().find(|a| !self.sessions.contains_key(a)).ok_or(TunnelError::PoolExhausted)?;
        let key = derive_key(user, password);
        self.sessions.insert(
            leased,
            TunnelSession { user: user.to_string(), leased, peer, established_at: now, send: Rc4State::new(&key), recv: Rc4State::new(&key) },
        );
        Ok(leased)
    }

    pub fn session_for_peer(&mut self, peer: Ipv4Addr) -> Option<&mut TunnelSession> {
        self.sessions.values_mut().find(|s| s.peer == peer)
    }

    pub fn session(&mut self, leased: Ipv4Addr) -> Option<&mut TunnelSession> {
        self.sessions.get_mut(&leased)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &TunnelSession> {
        self.sessions.values()
    }

    /// Drop the user's session and free its address.
    pub fn kick(&mut self, user: &str) -> Option<Ipv4Addr> {
        let leased = self.sessions.values().find(|s| s.user == user)?.leased;
        self.sessions.remove(&leased);
        Some(leased)
    }

    /// Tab-separated: user, leased address, established-at.
    pub fn sessions_text(&self) -> String {
        let mut out = String::new();
        for s in self.sessions.values() {
            let _ = writeln!(out, "{}\t{}\t{}", s.user, s.leased, s.established_at);
        }
        out
    }
}
