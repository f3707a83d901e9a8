//! Compiled dial plan and its step interpreter.
//!
//! [`Dialplan::step`] is a pure function of the plan, the execution state and
//! one input. Each call yields exactly one [`Action`] plus the successor state.
//! Read and Dial leave the state waiting; further steps return an await
//! marker until the digits or dial result arrive.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::time::Duration;

use crate::confkit::{DialplanDoc, MailboxRef, OperationCall, OperationKind, ValidationReport};

pub const DEFAULT_STEP_BUDGET: u32 = 10_000;
pub const DEFAULT_DIAL_TIMEOUT: Duration = Duration::from_secs(20);
/// Digits pending in a Read are accepted as-is after this much silence.
pub const INTER_DIGIT_TIMEOUT: Duration = Duration::from_secs(5);
pub const READ_TERMINATOR: char = '#';

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("configuration validation failed; refusing to compile the dial plan")]
    InvalidConfiguration,
    #[error("duplicate priority {priority} for extension {exten} in context {context}")]
    DuplicatePriority { context: String, exten: String, priority: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no extension {exten} in context {context}")]
pub struct NoSuchExtension {
    pub context: String,
    pub exten: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GotoTarget {
    pub context: String,
    pub exten: String,
    pub priority: u32,
}

impl fmt::Display for GotoTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.context, self.exten, self.priority)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Play(String),
    Hangup,
    Read { register: String, prompt: String },
    Goto(GotoTarget),
    Dial { target: String, timeout: Duration },
    Query(String),
    SayDigits(String),
    VoiceMail(MailboxRef),
    AwaitDigits,
    AwaitDial,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Play(file) => write!(f, "Play({file})"),
            Action::Hangup => f.write_str("Hangup"),
            Action::Read { register, prompt } => write!(f, "Read({register},{prompt})"),
            Action::Goto(t) => write!(f, "Goto({t})"),
            Action::Dial { target, timeout } => write!(f, "Dial({target},{})", timeout.as_secs()),
            Action::Query(t) => write!(f, "Query({t})"),
            Action::SayDigits(d) => write!(f, "SayDigits({d})"),
            Action::VoiceMail(r) => write!(f, "VoiceMail({r})"),
            Action::AwaitDigits => f.write_str("AwaitDigits"),
            Action::AwaitDial => f.write_str("AwaitDial"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialResult {
    Answered,
    NoAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepInput {
    /// The previous action finished.
    Continue,
    Digits(String),
    ReadTimeout,
    Dial(DialResult),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cursor {
    Priority(u32),
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Wait {
    Digits { register: String },
    Dial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecState {
    pub context: String,
    pub exten: String,
    pub cursor: Cursor,
    pub registers: BTreeMap<String, String>,
    digit_buffer: String,
    waiting: Option<Wait>,
    steps: u32,
}

impl ExecState {
    pub fn is_terminal(&self) -> bool {
        self.cursor == Cursor::Terminal
    }

    pub fn register(&self, name: &str) -> Option<&str> {
        self.registers.get(name).map(String::as_str)
    }

    pub fn awaiting_digits(&self) -> bool {
        matches!(self.waiting, Some(Wait::Digits { .. }))
    }

    pub fn awaiting_dial(&self) -> bool {
        matches!(self.waiting, Some(Wait::Dial))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub action: Action,
    pub state: ExecState,
    /// Runtime problem that ended the call (bad Goto, loop guard, bad args).
    pub diagnostic: Option<String>,
}

type Key = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dialplan {
    index: BTreeMap<Key, Vec<(u32, OperationCall)>>,
    step_budget: u32,
}

pub fn compile(doc: &DialplanDoc, report: &ValidationReport) -> Result<Dialplan, CompileError> {
    if !report.ok() {
        return Err(CompileError::InvalidConfiguration);
    }
    let mut index: BTreeMap<Key, Vec<(u32, OperationCall)>> = BTreeMap::new();
    for ctx in &doc.contexts {
        for line in &ctx.lines {
            index.entry((ctx.name.clone(), line.exten.clone())).or_default().push((line.priority, line.op.clone()));
        }
    }
    for ((context, exten), ops) in &mut index {
        ops.sort_by_key(|(p, _)| *p);
        if let Some(w) = ops.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(CompileError::DuplicatePriority { context: context.clone(), exten: exten.clone(), priority: w[0].0 });
        }
    }
    Ok(Dialplan { index, step_budget: DEFAULT_STEP_BUDGET })
}

impl Dialplan {
    pub fn with_step_budget(mut self, budget: u32) -> Self {
        self.step_budget = budget;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn operations(&self, context: &str, exten: &str) -> Option<&[(u32, OperationCall)]> {
        self.index.get(&(context.to_string(), exten.to_string())).map(Vec::as_slice)
    }

    pub fn has_extension(&self, context: &str, exten: &str) -> bool {
        self.operations(context, exten).is_some()
    }

    /// State positioned at the lowest priority of `exten`.
    pub fn start(&self, context: &str, exten: &str) -> Result<ExecState, NoSuchExtension> {
        let ops = self
            .operations(context, exten)
            .ok_or_else(|| NoSuchExtension { context: context.to_string(), exten: exten.to_string() })?;
        Ok(ExecState {
            context: context.to_string(),
            exten: exten.to_string(),
            cursor: Cursor::Priority(ops[0].0),
            registers: BTreeMap::new(),
            digit_buffer: String::new(),
            waiting: None,
            steps: 0,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((ctx, exten), ops) in &self.index {
            for (prio, op) in ops {
                let _ = writeln!(out, "[{ctx}] {exten},{prio},{op}");
            }
        }
        out
    }

    fn lookup(&self, context: &str, exten: &str, priority: u32) -> Option<&OperationCall> {
        self.operations(context, exten)?.iter().find(|(p, _)| *p == priority).map(|(_, op)| op)
    }

    fn next_priority(&self, context: &str, exten: &str, after: u32) -> Cursor {
        self.operations(context, exten)
            .and_then(|ops| ops.iter().map(|(p, _)| *p).find(|p| *p > after))
            .map_or(Cursor::Terminal, Cursor::Priority)
    }

    fn advance(&self, st: &mut ExecState) {
        if let Cursor::Priority(p) = st.cursor {
            st.cursor = self.next_priority(&st.context, &st.exten, p);
        }
    }

    pub fn step(&self, state: &ExecState, input: StepInput) -> Step {
        let mut st = state.clone();
        if let StepInput::Digits(d) = &input {
            st.digit_buffer.extend(d.chars().filter(|c| c.is_ascii_digit() || matches!(c, '*' | '#')));
        }
        match st.waiting.clone() {
            Some(Wait::Digits { register }) => {
                let value = match st.digit_buffer.find(READ_TERMINATOR) {
                    Some(pos) => {
                        let value = st.digit_buffer[..pos].to_string();
                        st.digit_buffer.drain(..=pos);
                        value
                    }
                    None if input == StepInput::ReadTimeout => std::mem::take(&mut st.digit_buffer),
                    None => return Step { action: Action::AwaitDigits, state: st, diagnostic: None },
                };
                st.registers.insert(register, value);
                st.waiting = None;
                self.advance(&mut st);
            }
            Some(Wait::Dial) => {
                let StepInput::Dial(result) = input else {
                    return Step { action: Action::AwaitDial, state: st, diagnostic: None };
                };
                let status = match result {
                    DialResult::Answered => "ANSWER",
                    DialResult::NoAnswer => "NOANSWER",
                };
                st.registers.insert("DIALSTATUS".to_string(), status.to_string());
                st.waiting = None;
                self.advance(&mut st);
            }
            None => {}
        }
        self.execute(st)
    }

    fn execute(&self, mut st: ExecState) -> Step {
        let Cursor::Priority(priority) = st.cursor else {
            return Step { action: Action::Hangup, state: st, diagnostic: None };
        };
        st.steps += 1;
        if st.steps > self.step_budget {
            st.cursor = Cursor::Terminal;
            let diag = format!("step budget of {} exhausted in [{}] {}; probable Goto loop", self.step_budget, st.context, st.exten);
            log::warn!("{diag}");
            return Step { action: Action::Hangup, state: st, diagnostic: Some(diag) };
        }
        let Some(op) = self.lookup(&st.context, &st.exten, priority).cloned() else {
            st.cursor = Cursor::Terminal;
            return Step { action: Action::Hangup, state: st, diagnostic: Some("cursor lost its priority".into()) };
        };
        let args = op.args.trim();
        let fail = |mut st: ExecState, diag: String| {
            log::warn!("dial plan runtime error: {diag}");
            st.cursor = Cursor::Terminal;
            Step { action: Action::Hangup, state: st, diagnostic: Some(diag) }
        };

        let action = match op.kind() {
            None => return fail(st, format!("unknown operation {}", op.name)),
            Some(OperationKind::Hangup) => {
                st.cursor = Cursor::Terminal;
                return Step { action: Action::Hangup, state: st, diagnostic: None };
            }
            Some(OperationKind::Playback) => Action::Play(args.to_string()),
            Some(OperationKind::Mysql) => Action::Query(args.to_string()),
            Some(OperationKind::SayDigits) => {
                let value = substitute(args, &st.registers);
                if value.is_empty() || !value.bytes().all(|b| b.is_ascii_digit()) {
                    return fail(st, format!("SayDigits needs digits, got {value:?}"));
                }
                Action::SayDigits(value)
            }
            Some(OperationKind::VoiceMailMain) => match MailboxRef::parse(args) {
                Some(r) => Action::VoiceMail(r),
                None => return fail(st, format!("VoiceMailMain argument {args:?} is not box@context")),
            },
            Some(OperationKind::Read) => {
                let mut parts = args.splitn(2, ',').map(str::trim);
                let register = parts.next().filter(|r| !r.is_empty());
                let Some(register) = register else {
                    return fail(st, "Read needs a register name".to_string());
                };
                let prompt = parts.next().unwrap_or("").to_string();
                let register = register.to_string();
                st.waiting = Some(Wait::Digits { register: register.clone() });
                return Step { action: Action::Read { register, prompt }, state: st, diagnostic: None };
            }
            Some(OperationKind::Dial) => {
                let mut parts = args.split(',').map(str::trim);
                let target = parts.next().unwrap_or("");
                let target = target.split_once('/').map_or(target, |(_, t)| t);
                if target.is_empty() {
                    return fail(st, "Dial needs a target".to_string());
                }
                let timeout = match parts.next().filter(|t| !t.is_empty()) {
                    None => DEFAULT_DIAL_TIMEOUT,
                    Some(t) => match t.parse::<u64>() {
                        Ok(secs) if secs > 0 => Duration::from_secs(secs),
                        _ => return fail(st, format!("Dial timeout {t:?} is not a positive integer")),
                    },
                };
                st.waiting = Some(Wait::Dial);
                return Step { action: Action::Dial { target: target.to_string(), timeout }, state: st, diagnostic: None };
            }
            Some(OperationKind::Goto) => {
                let target = match parse_goto(args, &st.context, &st.exten) {
                    Some(t) => t,
                    None => return fail(st, format!("malformed Goto target {args:?}")),
                };
                if self.lookup(&target.context, &target.exten, target.priority).is_none() {
                    return fail(st, format!("Goto target {target} does not exist"));
                }
                st.context = target.context.clone();
                st.exten = target.exten.clone();
                st.cursor = Cursor::Priority(target.priority);
                return Step { action: Action::Goto(target), state: st, diagnostic: None };
            }
        };
        self.advance(&mut st);
        Step { action, state: st, diagnostic: None }
    }
}

/// Replace `${name}` references with register values (missing ones become empty).
fn substitute(text: &str, registers: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        match rest[start + 2..].find('}') {
            Some(end) => {
                let name = &rest[start + 2..start + 2 + end];
                out.push_str(registers.get(name).map(String::as_str).unwrap_or(""));
                rest = &rest[start + 3 + end..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn parse_goto(args: &str, context: &str, exten: &str) -> Option<GotoTarget> {
    let parts: Vec<&str> = args.split([',', '|']).map(str::trim).collect();
    let (ctx, ext, prio) = match parts.as_slice() {
        [p] => (context, exten, *p),
        [e, p] => (context, *e, *p),
        [c, e, p] => (*c, *e, *p),
        _ => return None,
    };
    let priority: u32 = prio.parse().ok().filter(|p| *p > 0)?;
    if ctx.is_empty() || ext.is_empty() {
        return None;
    }
    Some(GotoTarget { context: ctx.to_string(), exten: ext.to_string(), priority })
}
