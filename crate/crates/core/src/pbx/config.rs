use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use crate::confkit::{
    parse_chap_secrets, parse_extensions_conf, parse_pptpd_conf, parse_sip_conf, parse_voicemail_conf, validate_cross,
    CredentialTable, DialplanDoc, ParseError, PeerEntry, TunnelConfig, ValidationReport, VoicemailConf,
};
use crate::sentinel::SentinelConfig;

pub const SERVER_ADDR: Ipv4Addr = Ipv4Addr::new(192, 168, 100, 37);

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("configuration rejected:\n{}", render_findings(.0))]
    Invalid(ValidationReport),
    #[error("{0}")]
    Other(String),
}

fn render_findings(report: &ValidationReport) -> String {
    report.errors().map(|f| format!("  {f}")).collect::<Vec<_>>().join("\n")
}

/// Paths to the five configuration files; the VPN pair is optional.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigPaths {
    pub sip_conf: Option<PathBuf>,
    pub extensions_conf: Option<PathBuf>,
    pub voicemail_conf: Option<PathBuf>,
    pub pptpd_conf: Option<PathBuf>,
    pub chap_secrets: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PbxConfig {
    pub peers: Vec<PeerEntry>,
    pub dialplan: DialplanDoc,
    pub voicemail: VoicemailConf,
    pub vpn: Option<(TunnelConfig, CredentialTable)>,
    pub report: ValidationReport,
    pub sentinel: SentinelConfig,
    pub seed: u64,
    pub server_addr: Ipv4Addr,
    pub sip_port: u16,
}

fn read(path: &Path) -> Result<String, StartupError> {
    std::fs::read_to_string(path).map_err(|source| StartupError::Io { path: path.to_path_buf(), source })
}

fn read_opt(path: &Option<PathBuf>) -> Result<String, StartupError> {
    path.as_deref().map_or(Ok(String::new()), read)
}

impl PbxConfig {
    /// Parse and cross-validate. A failed cross-check is an error: the
    /// server refuses to start.
    pub fn from_texts(sip: &str, extensions: &str, voicemail: &str, vpn: Option<(&str, &str)>) -> Result<PbxConfig, StartupError> {
        let peers = parse_sip_conf(sip)?;
        let dialplan = parse_extensions_conf(extensions)?;
        let voicemail = parse_voicemail_conf(voicemail)?;
        let vpn = match vpn {
            Some((pptpd, chap)) => Some((parse_pptpd_conf(pptpd)?, parse_chap_secrets(chap)?)),
            None => None,
        };
        let report = validate_cross(&peers, &dialplan, &voicemail);
        for w in report.warnings() {
            log::warn!("{w}");
        }
        if !report.ok() {
            return Err(StartupError::Invalid(report));
        }
        Ok(PbxConfig {
            peers,
            dialplan,
            voicemail,
            vpn,
            report,
            sentinel: SentinelConfig::default(),
            seed: 0,
            server_addr: SERVER_ADDR,
            sip_port: crate::sipnode::DEFAULT_SIP_PORT,
        })
    }

    pub fn load(paths: &ConfigPaths) -> Result<PbxConfig, StartupError> {
        let vpn = match (&paths.pptpd_conf, &paths.chap_secrets) {
            (Some(p), Some(c)) => Some((read(p)?, read(c)?)),
            (None, None) => None,
            _ => return Err(StartupError::Other("pptpd.conf and chap-secrets must be given together".into())),
        };
        PbxConfig::from_texts(
            &read_opt(&paths.sip_conf)?,
            &read_opt(&paths.extensions_conf)?,
            &read_opt(&paths.voicemail_conf)?,
            vpn.as_ref().map(|(p, c)| (p.as_str(), c.as_str())),
        )
    }
}
