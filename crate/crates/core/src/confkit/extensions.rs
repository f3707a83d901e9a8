use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use super::{is_digits, logical_lines, section_header, ConfFile, ParseError};

/// The dial-plan applications the interpreter knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperationKind {
    Playback,
    Hangup,
    Read,
    Goto,
    Dial,
    Mysql,
    SayDigits,
    VoiceMailMain,
}

impl OperationKind {
    pub const ALL: [OperationKind; 8] = [
        OperationKind::Playback,
        OperationKind::Hangup,
        OperationKind::Read,
        OperationKind::Goto,
        OperationKind::Dial,
        OperationKind::Mysql,
        OperationKind::SayDigits,
        OperationKind::VoiceMailMain,
    ];

    /// Application names are matched case-insensitively.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::Playback => "Playback",
            OperationKind::Hangup => "Hangup",
            OperationKind::Read => "Read",
            OperationKind::Goto => "Goto",
            OperationKind::Dial => "Dial",
            OperationKind::Mysql => "MYSQL",
            OperationKind::SayDigits => "SayDigits",
            OperationKind::VoiceMailMain => "VoiceMailMain",
        }
    }
}

/// An application invocation with its argument string kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationCall {
    pub name: String,
    pub args: String,
}

impl OperationCall {
    pub fn kind(&self) -> Option<OperationKind> {
        OperationKind::from_name(&self.name)
    }
}

impl fmt::Display for OperationCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtenLine {
    pub exten: String,
    pub priority: u32,
    pub op: OperationCall,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialplanContext {
    pub name: String,
    pub lines: Vec<ExtenLine>,
}

/// extensions.conf as written: contexts and their lines in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DialplanDoc {
    pub contexts: Vec<DialplanContext>,
}

impl DialplanDoc {
    pub fn context(&self, name: &str) -> Option<&DialplanContext> {
        self.contexts.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ctx in &self.contexts {
            let _ = writeln!(out, "[{}]", ctx.name);
            for line in &ctx.lines {
                let _ = writeln!(out, "exten => {},{},{}", line.exten, line.priority, line.op);
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_extensions_conf(text: &str) -> Result<DialplanDoc, ParseError> {
    let err = |line, msg: String| ParseError::new(ConfFile::Extensions, line, msg);
    let mut doc = DialplanDoc::default();
    let mut names = BTreeSet::new();

    for (lineno, line) in logical_lines(text, true) {
        if let Some(header) = section_header(line) {
            let name = header.map_err(|_| err(lineno, format!("malformed context header {line:?}")))?;
            if !names.insert(name.to_string()) {
                return Err(err(lineno, format!("duplicate context {name}")));
            }
            doc.contexts.push(DialplanContext { name: name.to_string(), lines: Vec::new() });
            continue;
        }
        let body = line
            .strip_prefix("exten")
            .map(str::trim_start)
            .and_then(|rest| rest.strip_prefix("=>").or_else(|| rest.strip_prefix('=')))
            .ok_or_else(|| err(lineno, format!("expected `exten =>` line, found {line:?}")))?;
        let ctx = doc
            .contexts
            .last_mut()
            .ok_or_else(|| err(lineno, "exten line outside any context".to_string()))?;
        ctx.lines.push(parse_exten_body(body).map_err(|m| err(lineno, m))?);
    }
    Ok(doc)
}

fn parse_exten_body(body: &str) -> Result<ExtenLine, String> {
    let mut parts = body.splitn(3, ',');
    let exten = parts.next().unwrap_or("").trim();
    let priority = parts.next().map(str::trim).ok_or("missing priority")?;
    let app = parts.next().map(str::trim).ok_or("missing operation")?;

    if !is_digits(exten) {
        return Err(format!("extension must be digits, found {exten:?}"));
    }
    let priority: u32 = priority.parse().map_err(|_| format!("priority must be a positive integer, found {priority:?}"))?;
    if priority == 0 {
        return Err("priority must be at least 1".to_string());
    }
    Ok(ExtenLine { exten: exten.to_string(), priority, op: parse_operation(app)? })
}

fn parse_operation(app: &str) -> Result<OperationCall, String> {
    let Some(open) = app.find('(') else {
        if app.contains(')') {
            return Err("unbalanced parentheses".to_string());
        }
        return valid_name(app).map(|name| OperationCall { name, args: String::new() });
    };
    let name = valid_name(app[..open].trim())?;
    let mut depth = 0i32;
    let mut close = None;
    for (pos, ch) in app.char_indices().skip_while(|(p, _)| *p < open) {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    close = Some(pos);
                    break;
                }
            }
            _ => {}
        }
    }
    let close = close.ok_or("unbalanced parentheses")?;
    if !app[close + 1..].trim().is_empty() {
        return Err(format!("unexpected text after operation: {:?}", &app[close + 1..]));
    }
    Ok(OperationCall { name, args: app[open + 1..close].to_string() })
}

fn valid_name(name: &str) -> Result<String, String> {
    if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
        return Err(format!("invalid operation name {name:?}"));
    }
    Ok(name.to_string())
}
