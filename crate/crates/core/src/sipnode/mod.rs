//! SIP signaling: the wire codec, nonce digest authentication, the registrar
//! and the call-session state machine.

mod digest;
mod message;
mod registrar;
mod session;

pub use digest::{authorization_header, compute_digest, md5_hex, md5_raw, Credentials};
pub use message::{CodecError, Method, SipMessage, SipUri, StartLine, StatusCode};
pub use registrar::{AuditEntry, RegisterEvent, Registrar, Registration, REGISTRATION_TTL};
pub use session::{next_state, session_event, CallEvent, CallSession, CallState, ProtocolError};

pub const DEFAULT_SIP_PORT: u16 = 5060;
