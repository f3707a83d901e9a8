use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallState {
    Inviting,
    Ringing,
    Active,
    Terminated,
    NoAnswer,
}

impl CallState {
    pub fn is_final(self) -> bool {
        matches!(self, CallState::Terminated | CallState::NoAnswer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CallState::Inviting => "inviting",
            CallState::Ringing => "ringing",
            CallState::Active => "active",
            CallState::Terminated => "terminated",
            CallState::NoAnswer => "no-answer",
        }
    }
}

impl fmt::Display for CallState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallEvent {
    Invite,
    Ring,
    Answer,
    Bye,
    Timeout,
}

impl CallEvent {
    pub const ALL: [CallEvent; 5] = [CallEvent::Invite, CallEvent::Ring, CallEvent::Answer, CallEvent::Bye, CallEvent::Timeout];
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal call event {event:?} in state {state}")]
pub struct ProtocolError {
    pub state: CallState,
    pub event: CallEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSession {
    pub id: String,
    pub caller: String,
    pub callee: String,
    pub state: CallState,
    /// SSRC of the caller's media stream once the call is active.
    pub media: Option<u32>,
}

impl CallSession {
    /// A new session created by an INVITE.
    pub fn invite(id: impl Into<String>, caller: impl Into<String>, callee: impl Into<String>) -> Self {
        CallSession { id: id.into(), caller: caller.into(), callee: callee.into(), state: CallState::Inviting, media: None }
    }

    pub fn apply(mut self, event: CallEvent) -> Result<CallSession, ProtocolError> {
        self.state = next_state(self.state, event)?;
        Ok(self)
    }
}

/// The complete transition table. An INVITE only ever creates a session, so
/// it is illegal against an existing one.
pub fn next_state(state: CallState, event: CallEvent) -> Result<CallState, ProtocolError> {
    use CallEvent as E;
    use CallState as S;
    match (state, event) {
        (S::Inviting, E::Ring) => Ok(S::Ringing),
        (S::Ringing, E::Answer) => Ok(S::Active),
        (S::Inviting | S::Ringing, E::Timeout) => Ok(S::NoAnswer),
        (S::Active, E::Bye) => Ok(S::Terminated),
        _ => Err(ProtocolError { state, event }),
    }
}

pub fn session_event(session: CallSession, event: CallEvent) -> Result<CallSession, ProtocolError> {
    session.apply(event)
}
