use md5::{Digest, Md5};

/// Lowercase hex MD5 of `user:secret:nonce`.
pub fn compute_digest(user: &str, secret: &str, nonce: &str) -> String {
    md5_hex(format!("{user}:{secret}:{nonce}").as_bytes())
}

pub fn md5_hex(data: &[u8]) -> String {
    let out = Md5::digest(data);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn md5_raw(data: &[u8]) -> [u8; 16] {
    Md5::digest(data).into()
}

/// Render an `Authorization` header value.
pub fn authorization_header(user: &str, nonce: &str, response: &str) -> String {
    format!("Digest username=\"{user}\", nonce=\"{nonce}\", response=\"{response}\"")
}

/// Parsed `Authorization: Digest ...` parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    pub username: String,
    pub nonce: String,
    pub response: String,
}

impl Credentials {
    pub fn parse(value: &str) -> Option<Credentials> {
        let params = value.trim().strip_prefix("Digest")?.trim();
        let mut username = None;
        let mut nonce = None;
        let mut response = None;
        for param in params.split(',') {
            let (k, v) = param.split_once('=')?;
            let v = v.trim().trim_matches('"').to_string();
            match k.trim().to_ascii_lowercase().as_str() {
                "username" => username = Some(v),
                "nonce" => nonce = Some(v),
                "response" => response = Some(v),
                _ => {}
            }
        }
        Some(Credentials { username: username?, nonce: nonce?, response: response? })
    }
}
