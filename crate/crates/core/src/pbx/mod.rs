//! Composition root: wires the modules into one server and drives it
//! from scripted scenarios on a virtual clock.

mod attack;
mod clock;
mod config;
mod harness;
mod metrics;
mod scenario;
mod server;

pub use attack::{attack_generate, AttackKind, BRUTE_FORCE_SPACING, SCAN_SPACING};
pub use clock::VirtualClock;
pub use config::{ConfigPaths, PbxConfig, StartupError, SERVER_ADDR};
pub use harness::{run_scenario, run_scenario_file, Failure, Run, CLIENT_RTP_PORT};
pub use metrics::{RunMetrics, COUNTERS};
pub use scenario::{Assertion, AttackSource, ClientSpec, Scenario, ScenarioError, ScriptStep, Settings, Student, Verb};
pub use server::{Call, Captured, MediaStart, Outbound, Outcome, Pbx, Timer, RTP_PORT_BASE, SERVICES};
