//! A desk-scale secure VoIP PBX.
//!
//! The crate models a single Asterisk-style server: configuration parsing,
//! a SIP registrar and call engine, a dial-plan interpreter with an
//! attendance IVR and voicemail, and a layered security pipeline (tunnel,
//! packet filter, rate-based IDS with active response, database privilege
//! gate). The [`pbx`] module wires the pieces together under a virtual clock.

pub mod acl;
pub mod confkit;
pub mod dialplan;
pub mod ivrvm;
pub mod media;
pub mod notify;
pub mod pbx;
pub mod pktfilter;
pub mod sentinel;
pub mod sipnode;
pub mod time;
pub mod tunnel;

pub use time::SimTime;
