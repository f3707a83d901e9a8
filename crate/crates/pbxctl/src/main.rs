use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minipbx::pbx::{run_scenario_file, ConfigPaths, PbxConfig, StartupError};

mod admin;
mod daemon;

/// Exit status for a configuration or startup problem.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "pbxctl", version, about = "Run, inspect and administer a minipbx server")]
struct Cli {
    /// Directory holding firewall.rules, blacklist.tsv, alerts.log, grants,
    /// vpn-sessions.tsv and mail.journal.
    #[arg(long, global = true, env = "PBXCTL_STATE_DIR", default_value = "state")]
    state_dir: PathBuf,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct ConfArgs {
    #[arg(long)]
    sip_conf: PathBuf,
    #[arg(long)]
    extensions_conf: PathBuf,
    #[arg(long)]
    voicemail_conf: PathBuf,
    #[arg(long, requires = "chap_secrets")]
    pptpd_conf: Option<PathBuf>,
    #[arg(long, requires = "pptpd_conf")]
    chap_secrets: Option<PathBuf>,
}

impl ConfArgs {
    fn paths(&self) -> ConfigPaths {
        ConfigPaths {
            sip_conf: Some(self.sip_conf.clone()),
            extensions_conf: Some(self.extensions_conf.clone()),
            voicemail_conf: Some(self.voicemail_conf.clone()),
            pptpd_conf: self.pptpd_conf.clone(),
            chap_secrets: self.chap_secrets.clone(),
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Transport {
    Udp,
    Sim,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Play a scenario on the virtual clock and write its state files.
    Run {
        scenario: PathBuf,
        /// Where to write the state files (defaults to --state-dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and cross-check the configuration files.
    Validate(ConfArgs),
    /// Serve SIP on a real UDP socket.
    Daemon {
        #[command(flatten)]
        conf: ConfArgs,
        #[arg(long, default_value_t = 5060)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: Ipv4Addr,
        #[arg(long, value_enum, default_value = "udp")]
        transport: Transport,
        /// Scenario to play when --transport sim is chosen.
        #[arg(long, required_if_eq("transport", "sim"))]
        scenario: Option<PathBuf>,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        voicemail_journal: Option<PathBuf>,
        /// Student records for the attendance line.
        #[arg(long)]
        attendance_db: Option<PathBuf>,
    },
    /// Firewall chain.
    #[command(subcommand)]
    Fw(admin::FwCmd),
    /// Intrusion detection and the blacklist.
    #[command(subcommand)]
    Sentinel(admin::SentinelCmd),
    /// Tunnel sessions.
    #[command(subcommand)]
    Vpn(admin::VpnCmd),
    /// Attendance store privileges.
    #[command(subcommand)]
    Db(admin::DbCmd),
    /// Notification journal.
    #[command(subcommand)]
    Mail(admin::MailCmd),
    /// Dial plan.
    #[command(subcommand)]
    Plan(PlanCmd),
}

#[derive(Subcommand, Debug)]
enum PlanCmd {
    /// Print the compiled dial plan.
    Show(ConfArgs),
}

fn report_startup(e: &StartupError) -> ExitCode {
    eprintln!("pbxctl: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn run(scenario: &Path, out: &Path) -> ExitCode {
    let run = match run_scenario_file(scenario) {
        Ok(r) => r,
        Err(e) => return report_startup(&e),
    };
    if let Err(e) = run.write_artifacts(out) {
        eprintln!("pbxctl: writing {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    print!("{}", run.pbx.final_metrics().report());
    match run.first_failure() {
        None => {
            println!("scenario {} passed", run.name);
            ExitCode::SUCCESS
        }
        Some(f) => {
            eprintln!("scenario {} failed: {f}", run.name);
            if run.failures.len() > 1 {
                eprintln!("({} more failures)", run.failures.len() - 1);
            }
            ExitCode::FAILURE
        }
    }
}

fn validate(conf: &ConfArgs) -> ExitCode {
    match PbxConfig::load(&conf.paths()) {
        Ok(cfg) => {
            for w in cfg.report.warnings() {
                println!("warning: {w}");
            }
            println!("configuration ok: {} peers, {} contexts", cfg.peers.len(), cfg.dialplan.contexts.len());
            ExitCode::SUCCESS
        }
        Err(e) => report_startup(&e),
    }
}

fn plan_show(conf: &ConfArgs) -> ExitCode {
    let cfg = match PbxConfig::load(&conf.paths()) {
        Ok(c) => c,
        Err(e) => return report_startup(&e),
    };
    match minipbx::dialplan::compile(&cfg.dialplan, &cfg.report) {
        Ok(plan) => {
            print!("{}", plan.to_text());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pbxctl: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match &cli.cmd {
        Cmd::Run { scenario, out } => run(scenario, out.as_deref().unwrap_or(&cli.state_dir)),
        Cmd::Validate(conf) => validate(conf),
        Cmd::Plan(PlanCmd::Show(conf)) => plan_show(conf),
        Cmd::Daemon { conf, port, bind, transport, scenario, duration, voicemail_journal, attendance_db } => match transport {
            Transport::Sim => run(scenario.as_deref().expect("required by clap"), &cli.state_dir),
            Transport::Udp => {
                let opts = daemon::Options { bind: *bind, port: *port, duration: *duration, voicemail_journal: voicemail_journal.clone(), attendance_db: attendance_db.clone() };
                match PbxConfig::load(&conf.paths()) {
                    Ok(cfg) => daemon::serve(cfg, &opts, &cli.state_dir),
                    Err(e) => report_startup(&e),
                }
            }
        },
        Cmd::Fw(c) => admin::fw(c, &cli.state_dir),
        Cmd::Sentinel(c) => admin::sentinel(c, &cli.state_dir),
        Cmd::Vpn(c) => admin::vpn(c, &cli.state_dir),
        Cmd::Db(c) => admin::db(c, &cli.state_dir),
        Cmd::Mail(c) => admin::mail(c, &cli.state_dir),
    }
}
