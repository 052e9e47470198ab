//! Line-delimited JSON event traces and the comparisons run over them.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

pub const TRACE_FORMAT: &str = "mbbt-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Det,
    Udp,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Det => "det",
            Mode::Udp => "udp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub seed: u64,
}

impl TraceHeader {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self { format: TRACE_FORMAT.into(), version: TRACE_VERSION, mode, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    TickStatus,
    Publish,
    Request,
    Response,
    Arrival,
    RecoveryEnter,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub tick: u64,
    pub ns: String,
    pub kind: EventKind,
    pub payload: Json,
}

/// One entry of a completion log: an action leaf reaching a final status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub ns: String,
    pub action: String,
    pub status: String,
}

impl fmt::Display for Completion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.ns, self.action, self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is empty")]
    Empty,
    #[error("not a {TRACE_FORMAT} file")]
    Format,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompareError {
    #[error("refusing to compare a {0} trace: only deterministic traces are comparable")]
    Nondeterministic(Mode),
    #[error("completion logs diverge at entry {index}: {left} vs {right}")]
    Diverge { index: usize, left: String, right: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<Record>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: TraceHeader = serde_json::from_str(first).map_err(|_| TraceError::Format)?;
        if header.format != TRACE_FORMAT {
            return Err(TraceError::Format);
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r = serde_json::from_str(line)
                .map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            records.push(r);
        }
        Ok(Self { header, records })
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn in_ns<'a>(&'a self, ns: &'a str) -> impl Iterator<Item = &'a Record> {
        self.records.iter().filter(move |r| r.ns == ns)
    }

    /// Terminal results of action and action-server leaves, in trace order,
    /// optionally restricted to one namespace.
    pub fn completions(&self, project: Option<&str>) -> Vec<Completion> {
        self.of_kind(EventKind::TickStatus)
            .filter(|r| project.is_none_or(|ns| r.ns == ns))
            .filter(|r| matches!(r.payload["node"].as_str(), Some("action" | "action-server")))
            .filter(|r| matches!(r.payload["status"].as_str(), Some("success" | "failure")))
            .map(|r| Completion {
                ns: r.ns.clone(),
                action: r.payload["name"].as_str().unwrap_or_default().to_string(),
                status: r.payload["status"].as_str().unwrap_or_default().to_string(),
            })
            .collect()
    }

    /// Commands sent to the server at `server_ns`, in order.
    pub fn commands(&self, server_ns: &str) -> Vec<Json> {
        self.of_kind(EventKind::Request)
            .filter(|r| r.payload["server"] == server_ns)
            .map(|r| r.payload["command"].clone())
            .collect()
    }

    /// Cells reached by `ns` at goal arrivals.
    pub fn visits(&self, ns: &str) -> Vec<(u64, [i64; 2])> {
        self.of_kind(EventKind::Arrival)
            .filter(|r| r.ns == ns && r.payload["kind"] == "goal")
            .map(|r| (r.tick, [r.payload["cell"][0].as_i64().unwrap_or(-1), r.payload["cell"][1].as_i64().unwrap_or(-1)]))
            .collect()
    }
}

/// Compares projected completion logs. Only deterministic traces qualify.
pub fn compare(a: &Trace, b: &Trace, project: Option<&str>) -> Result<usize, CompareError> {
    for t in [a, b] {
        if t.header.mode != Mode::Det {
            return Err(CompareError::Nondeterministic(t.header.mode));
        }
    }
    let (la, lb) = (a.completions(project), b.completions(project));
    for i in 0..la.len().max(lb.len()) {
        match (la.get(i), lb.get(i)) {
            (Some(x), Some(y)) if x == y => {}
            (x, y) => {
                let show = |c: Option<&Completion>| c.map_or("<end>".to_string(), |c| c.to_string());
                return Err(CompareError::Diverge { index: i, left: show(x), right: show(y) });
            }
        }
    }
    Ok(la.len())
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    fn rec(ns: &str, node: &str, name: &str, status: &str) -> Record {
        Record { tick: 1, ns: ns.into(), kind: EventKind::TickStatus, payload: json!({"node": node, "name": name, "status": status}) }
    }

    fn trace(records: Vec<Record>) -> Trace {
        Trace { header: TraceHeader::new(Mode::Det, 0), records }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = trace(vec![rec("r", "action", "a", "success")]);
        let text = t.to_jsonl();
        assert!(text.starts_with(r#"{"format":"mbbt-trace","version":1,"mode":"det","seed":0}"#));
        assert_eq!(Trace::parse(&text).unwrap(), t);
        assert_eq!(Trace::parse("{}\n"), Err(TraceError::Format));
        let bad = format!("{}\nnot json\n", text.lines().next().unwrap());
        assert!(matches!(Trace::parse(&bad), Err(TraceError::Parse { line: 2, .. })));
    }

    #[test]
    fn completion_logs_skip_running_and_clients() {
        let t = trace(vec![
            rec("r", "action", "a", "running"),
            rec("r", "action-client", "a", "success"),
            rec("r", "condition", "c", "success"),
            rec("r", "action-server", "a", "success"),
            rec("q", "action", "b", "failure"),
        ]);
        assert_eq!(t.completions(None).len(), 2);
        assert_eq!(t.completions(Some("q"))[0].action, "b");
    }

    #[test]
    fn compare_reports_first_divergence_and_refuses_udp() {
        let a = trace(vec![rec("r", "action", "a", "success"), rec("r", "action", "b", "success")]);
        let b = trace(vec![rec("r", "action", "b", "success"), rec("r", "action", "a", "success")]);
        assert_eq!(compare(&a, &a, None), Ok(2));
        assert!(matches!(compare(&a, &b, Some("r")), Err(CompareError::Diverge { index: 0, .. })));
        let mut u = a.clone();
        u.header.mode = Mode::Udp;
        assert_eq!(compare(&a, &u, None), Err(CompareError::Nondeterministic(Mode::Udp)));
    }
}
