//! The SIP text subset: start line, headers, blank line, body.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("message is not valid UTF-8 in its header section")]
    NotText,
    #[error("missing blank line after headers")]
    MissingBlankLine,
    #[error("malformed start line {0:?}")]
    MalformedStartLine(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("unsupported status code {0:?}")]
    UnknownStatus(String),
    #[error("malformed URI {0:?}")]
    MalformedUri(String),
    #[error("malformed header line {0:?}")]
    MalformedHeader(String),
    #[error("duplicate {0} header")]
    DuplicateHeader(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Register,
    Invite,
    Ack,
    Bye,
    Options,
    Subscribe,
    Notify,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Register, Method::Invite, Method::Ack, Method::Bye, Method::Options, Method::Subscribe, Method::Notify];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Register => "REGISTER",
            Method::Invite => "INVITE",
            Method::Ack => "ACK",
            Method::Bye => "BYE",
            Method::Options => "OPTIONS",
            Method::Subscribe => "SUBSCRIBE",
            Method::Notify => "NOTIFY",
        }
    }
}

impl FromStr for Method {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| CodecError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusCode {
    Ok,
    Unauthorized,
    Forbidden,
    NotFound,
}

impl StatusCode {
    pub const ALL: [StatusCode; 4] = [StatusCode::Ok, StatusCode::Unauthorized, StatusCode::Forbidden, StatusCode::NotFound];

    pub fn code(self) -> u16 {
        match self {
            StatusCode::Ok => 200,
            StatusCode::Unauthorized => 401,
            StatusCode::Forbidden => 403,
            StatusCode::NotFound => 404,
        }
    }

    pub fn reason(self) -> &'static str {
        match self {
            StatusCode::Ok => "OK",
            StatusCode::Unauthorized => "Unauthorized",
            StatusCode::Forbidden => "Forbidden",
            StatusCode::NotFound => "Not Found",
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        StatusCode::ALL.into_iter().find(|s| s.code() == code)
    }
}

/// `sip:user@host[:port]`
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SipUri {
    pub user: String,
    pub host: String,
    pub port: Option<u16>,
}

impl SipUri {
    pub fn new(user: impl Into<String>, host: impl Into<String>, port: Option<u16>) -> Self {
        SipUri { user: user.into(), host: host.into(), port }
    }

    /// Pull a URI out of a header value such as `"Bob" <sip:bob@10.0.0.2>;tag=1`.
    pub fn from_header_value(value: &str) -> Result<SipUri, CodecError> {
        let inner = match (value.find('<'), value.find('>')) {
            (Some(a), Some(b)) if a < b => &value[a + 1..b],
            _ => value.split(';').next().unwrap_or(value).trim(),
        };
        inner.parse()
    }

    pub fn host_addr(&self) -> Option<Ipv4Addr> {
        self.host.parse().ok()
    }
}

fn is_uri_token(s: &str, extra: &[u8]) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || extra.contains(&b))
}

impl FromStr for SipUri {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::MalformedUri(s.to_string());
        let rest = s.strip_prefix("sip:").ok_or_else(bad)?;
        let (user, hostport) = rest.split_once('@').ok_or_else(bad)?;
        let (host, port) = match hostport.rsplit_once(':') {
            Some((h, p)) => {
                let port: u16 = p.parse().map_err(|_| bad())?;
                if port == 0 {
                    return Err(bad());
                }
                (h, Some(port))
            }
            None => (hostport, None),
        };
        if !is_uri_token(user, b"_.-+*#") || !is_uri_token(host, b".-") {
            return Err(bad());
        }
        Ok(SipUri::new(user, host, port))
    }
}

impl fmt::Display for SipUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sip:{}@{}", self.user, self.host)?;
        if let Some(p) = self.port {
            write!(f, ":{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, uri: SipUri },
    Status(StatusCode),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipMessage {
    pub start: StartLine,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

/// Headers that may appear at most once (compared case-insensitively).
const SINGLETON_HEADERS: [&str; 4] = ["From", "To", "CSeq", "Call-ID"];

impl SipMessage {
    pub fn request(method: Method, uri: SipUri) -> Self {
        SipMessage { start: StartLine::Request { method, uri }, headers: Vec::new(), body: Vec::new() }
    }

    pub fn status(code: StatusCode) -> Self {
        SipMessage { start: StartLine::Status(code), headers: Vec::new(), body: Vec::new() }
    }

    /// A response that echoes the dialog-identifying headers of `req`.
    pub fn response_to(req: &SipMessage, code: StatusCode) -> Self {
        let mut resp = SipMessage::status(code);
        for name in ["Via", "From", "To", "Call-ID", "CSeq"] {
            if let Some(v) = req.header(name) {
                resp.headers.push((name.to_string(), v.to_string()));
            }
        }
        resp
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.set_header(name, value);
        self
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body = body.into();
        self
    }

    /// Replace an existing header of the same name or append a new one.
    pub fn set_header(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self.headers.iter_mut().find(|(n, _)| n.eq_ignore_ascii_case(name)) {
            Some(slot) => slot.1 = value,
            None => self.headers.push((name.to_string(), value)),
        }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn method(&self) -> Option<Method> {
        match &self.start {
            StartLine::Request { method, .. } => Some(*method),
            StartLine::Status(_) => None,
        }
    }

    pub fn uri(&self) -> Option<&SipUri> {
        match &self.start {
            StartLine::Request { uri, .. } => Some(uri),
            StartLine::Status(_) => None,
        }
    }

    pub fn status_code(&self) -> Option<StatusCode> {
        match &self.start {
            StartLine::Status(code) => Some(*code),
            StartLine::Request { .. } => None,
        }
    }

    pub fn call_id(&self) -> Option<&str> {
        self.header("Call-ID")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        match &self.start {
            StartLine::Request { method, uri } => {
                out.push_str(method.as_str());
                out.push(' ');
                out.push_str(&uri.to_string());
                out.push_str(" SIP/2.0\r\n");
            }
            StartLine::Status(code) => {
                out.push_str(&format!("SIP/2.0 {} {}\r\n", code.code(), code.reason()));
            }
        }
        for (name, value) in &self.headers {
            out.push_str(name);
            out.push_str(": ");
            out.push_str(value);
            out.push_str("\r\n");
        }
        out.push_str("\r\n");
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.body);
        bytes
    }

    pub fn decode(bytes: &[u8]) -> Result<SipMessage, CodecError> {
        let split = bytes.windows(4).position(|w| w == b"\r\n\r\n");
        // A message with no headers ends its start line with the blank line.
        let (head, body) = match split {
            Some(pos) => (&bytes[..pos], &bytes[pos + 4..]),
            None => return Err(CodecError::MissingBlankLine),
        };
        let head = std::str::from_utf8(head).map_err(|_| CodecError::NotText)?;
        let mut lines = head.split("\r\n");
        let start_line = lines.next().unwrap_or_default();
        let start = parse_start_line(start_line)?;

        let mut headers: Vec<(String, String)> = Vec::new();
        for line in lines {
            let (name, value) = line.split_once(':').ok_or_else(|| CodecError::MalformedHeader(line.to_string()))?;
            let name = name.trim();
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_graphic()) {
                return Err(CodecError::MalformedHeader(line.to_string()));
            }
            if let Some(single) = SINGLETON_HEADERS.iter().find(|s| s.eq_ignore_ascii_case(name)) {
                if headers.iter().any(|(n, _)| n.eq_ignore_ascii_case(name)) {
                    return Err(CodecError::DuplicateHeader(single.to_string()));
                }
            }
            headers.push((name.to_string(), value.trim().to_string()));
        }
        Ok(SipMessage { start, headers, body: body.to_vec() })
    }
}

fn parse_start_line(line: &str) -> Result<StartLine, CodecError> {
    let malformed = || CodecError::MalformedStartLine(line.to_string());
    if let Some(rest) = line.strip_prefix("SIP/2.0 ") {
        let (code, _reason) = rest.split_once(' ').unwrap_or((rest, ""));
        let code = code
            .parse::<u16>()
            .ok()
            .and_then(StatusCode::from_code)
            .ok_or_else(|| CodecError::UnknownStatus(code.to_string()))?;
        return Ok(StartLine::Status(code));
    }
    let mut parts = line.split(' ');
    let (Some(method), Some(uri), Some(version), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(malformed());
    };
    if version != "SIP/2.0" {
        return Err(malformed());
    }
    Ok(StartLine::Request { method: method.parse()?, uri: uri.parse()? })
}
