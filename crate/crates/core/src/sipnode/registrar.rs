//! Challenge/response registrar backed by the sip.conf peer directory.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::time::Duration;

use super::digest::{compute_digest, md5_hex, Credentials};
use super::message::{Method, SipMessage, SipUri, StatusCode};
use crate::confkit::PeerEntry;
use crate::SimTime;

pub const REGISTRATION_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub peer: String,
    pub contact: SocketAddrV4,
    pub expires_at: SimTime,
    pub authenticated: bool,
}

/// What the registrar observed while answering one REGISTER. The pipeline
/// forwards these to the IDS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegisterEvent {
    Challenged { peer: String },
    Registered { peer: String },
    Unregistered { peer: String },
    AuthFailure { peer: String, reason: String },
    UnknownUser { user: String },
    NotRegister,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub at: SimTime,
    pub peer: String,
    pub digest_verified: bool,
    pub registered: bool,
}

#[derive(Debug, Clone)]
pub struct Registrar {
    peers: BTreeMap<String, PeerEntry>,
    registrations: BTreeMap<String, Registration>,
    outstanding: BTreeMap<String, String>,
    issued: BTreeSet<String>,
    nonce_counter: u64,
    audit: Vec<AuditEntry>,
}

impl Registrar {
    pub fn new(peers: &[PeerEntry]) -> Self {
        Registrar {
            peers: peers.iter().map(|p| (p.auth_name().to_string(), p.clone())).collect(),
            registrations: BTreeMap::new(),
            outstanding: BTreeMap::new(),
            issued: BTreeSet::new(),
            nonce_counter: 0,
            audit: Vec::new(),
        }
    }

    pub fn peer(&self, name: &str) -> Option<&PeerEntry> {
        self.peers.get(name)
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerEntry> {
        self.peers.values()
    }

    /// Current registration of `peer`, dropping it first if it has expired.
    pub fn lookup(&mut self, peer: &str, now: SimTime) -> Option<&Registration> {
        if self.registrations.get(peer).is_some_and(|r| r.expires_at <= now) {
            self.registrations.remove(peer);
        }
        self.registrations.get(peer)
    }

    /// Find the live registration whose contact address is `addr`.
    pub fn registered_at(&mut self, addr: Ipv4Addr, now: SimTime) -> Option<&Registration> {
        self.registrations.retain(|_, r| r.expires_at > now);
        self.registrations.values().find(|r| *r.contact.ip() == addr)
    }

    pub fn registrations(&self) -> impl Iterator<Item = &Registration> {
        self.registrations.values()
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn issued_nonces(&self) -> &BTreeSet<String> {
        &self.issued
    }

    fn fresh_nonce(&mut self) -> String {
        loop {
            self.nonce_counter += 1;
            let nonce = md5_hex(format!("minipbx-nonce:{}", self.nonce_counter).as_bytes())[..16].to_string();
            if self.issued.insert(nonce.clone()) {
                return nonce;
            }
        }
    }

    fn challenge(&mut self, req: &SipMessage, peer: &str) -> SipMessage {
        let nonce = self.fresh_nonce();
        self.outstanding.insert(nonce.clone(), peer.to_string());
        SipMessage::response_to(req, StatusCode::Unauthorized).with_header("Nonce", nonce)
    }

    pub fn handle_register(&mut self, req: &SipMessage, source: SocketAddrV4, now: SimTime) -> (SipMessage, RegisterEvent) {
        let Some(uri) = req.uri().filter(|_| req.method() == Some(Method::Register)) else {
            return (SipMessage::response_to(req, StatusCode::Forbidden), RegisterEvent::NotRegister);
        };
        let user = uri.user.clone();
        let Some(secret) = self.peers.get(&user).map(|p| p.secret.clone()) else {
            return (SipMessage::response_to(req, StatusCode::NotFound), RegisterEvent::UnknownUser { user });
        };

        let Some(auth) = req.header("Authorization") else {
            let resp = self.challenge(req, &user);
            return (resp, RegisterEvent::Challenged { peer: user });
        };

        let verdict = match (Credentials::parse(auth), secret) {
            (None, _) => Err("malformed Authorization header"),
            (Some(_), None) => Err("peer has no secret configured"),
            (Some(creds), Some(secret)) => {
                let issued_to = self.outstanding.remove(&creds.nonce);
                if creds.username != user {
                    Err("username does not match request URI")
                } else if issued_to.as_deref() != Some(user.as_str()) {
                    Err("stale or unknown nonce")
                } else if creds.response != compute_digest(&user, &secret, &creds.nonce) {
                    Err("digest mismatch")
                } else {
                    Ok(())
                }
            }
        };

        if let Err(reason) = verdict {
            self.audit.push(AuditEntry { at: now, peer: user.clone(), digest_verified: false, registered: false });
            let resp = self.challenge(req, &user);
            return (resp, RegisterEvent::AuthFailure { peer: user, reason: reason.to_string() });
        }

        let unregister = req.header("Expires").is_some_and(|v| v.trim() == "0");
        self.audit.push(AuditEntry { at: now, peer: user.clone(), digest_verified: true, registered: !unregister });
        if unregister {
            self.registrations.remove(&user);
            return (SipMessage::response_to(req, StatusCode::Ok), RegisterEvent::Unregistered { peer: user });
        }
        let contact = req
            .header("Contact")
            .and_then(|c| SipUri::from_header_value(c).ok())
            .and_then(|c| Some(SocketAddrV4::new(c.host_addr()?, c.port.unwrap_or(5060))))
            .unwrap_or(source);
        self.registrations.insert(
            user.clone(),
            Registration { peer: user.clone(), contact, expires_at: now + REGISTRATION_TTL, authenticated: true },
        );
        let resp = SipMessage::response_to(req, StatusCode::Ok)
            .with_header("Contact", format!("<sip:{}@{}>", user, contact))
            .with_header("Expires", REGISTRATION_TTL.as_secs().to_string());
        (resp, RegisterEvent::Registered { peer: user })
    }
}
