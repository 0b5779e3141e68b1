//! Deterministic run traces: one CSV per agent, an event log and a summary.
//!
//! Files written into the output directory:
//!
//! * `agent_<id>.csv`: one row per step with state, input, synchronization
//!   value, disturbance norm, Lyapunov value and planar poses.
//! * `events.csv`: sample, solve, apply, broadcast, trigger-decision and
//!   hook-result records sorted by `(k, agent, kind)`.
//! * `summary.toml`: counters and hook tallies, tagged with the trace version.
//!
//! Floats are printed in Rust's shortest round-trip form, so identical runs
//! produce byte-identical files.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

/// Bumped whenever a column is added, removed or reinterpreted.
pub const TRACE_VERSION: u32 = 1;

/// Environment variable selecting the trace [`Verbosity`].
pub const TRACE_ENV: &str = "SYNCDMPC_TRACE";

/// How much of the event log is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum Verbosity {
    /// Agent CSVs and the summary only.
    Quiet,
    /// Adds the event log, omitting hook checks that passed.
    Events,
    /// Every event, including passing hook checks.
    #[default]
    Full,
}

impl Verbosity {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "quiet" => Ok(Verbosity::Quiet),
            "1" | "events" => Ok(Verbosity::Events),
            "2" | "full" => Ok(Verbosity::Full),
            other => Err(Error::Trace(format!(
                "{TRACE_ENV}={other:?}: expected quiet|events|full (or 0|1|2)"
            ))),
        }
    }

    /// Reads [`TRACE_ENV`], defaulting to [`Verbosity::Full`] when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var(TRACE_ENV) {
            Ok(v) => Self::parse(&v),
            Err(_) => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Sample,
    Solve,
    Apply,
    Broadcast,
    TriggerDecision,
    HookResult,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Sample,
        EventKind::Solve,
        EventKind::Apply,
        EventKind::Broadcast,
        EventKind::TriggerDecision,
        EventKind::HookResult,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Sample => "sample",
            EventKind::Solve => "solve",
            EventKind::Apply => "apply",
            EventKind::Broadcast => "broadcast",
            EventKind::TriggerDecision => "trigger-decision",
            EventKind::HookResult => "hook-result",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One record of the event log. `value` and `bound` are `NaN` when unused;
/// equality compares them bitwise so that unused fields compare equal.
#[derive(Debug, Clone)]
pub struct Event {
    pub k: usize,
    pub agent: usize,
    pub kind: EventKind,
    pub name: String,
    pub status: String,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.k, self.agent, self.kind, &self.name, &self.status, &self.detail)
            == (other.k, other.agent, other.kind, &other.name, &other.status, &other.detail)
            && self.value.to_bits() == other.value.to_bits()
            && self.bound.to_bits() == other.bound.to_bits()
    }
}

impl Event {
    pub fn new(k: usize, agent: usize, kind: EventKind, name: impl Into<String>, status: impl Into<String>) -> Self {
        Self {
            k,
            agent,
            kind,
            name: name.into(),
            status: status.into(),
            value: f64::NAN,
            bound: f64::NAN,
            detail: String::new(),
        }
    }

    pub fn values(mut self, value: f64, bound: f64) -> Self {
        self.value = value;
        self.bound = bound;
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn is_passing_hook(&self) -> bool {
        self.kind == EventKind::HookResult && self.status == "pass"
    }
}

/// One closed-loop step of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRow {
    pub k: usize,
    pub agent: usize,
    /// `"mpc"` or `"terminal"`.
    pub mode: String,
    pub triggered: bool,
    /// Length of the open-loop phase in force (0 in terminal mode).
    pub phase: usize,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub s: f64,
    pub d_norm: f64,
    /// Lyapunov value `V(k)` when defined (MPC mode with a certified plan).
    pub value: Option<f64>,
    pub pose: Option<[f64; 3]>,
    pub reference: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrace {
    pub id: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub rows: Vec<AgentRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub agents: Vec<AgentTrace>,
    pub events: Vec<Event>,
}

impl Trace {
    /// Sorts events by `(k, agent, kind)`, keeping emission order within ties.
    pub fn sort_events(&mut self) {
        self.events.sort_by_key(|e| (e.k, e.agent, e.kind));
    }

    pub fn agent(&self, id: usize) -> Option<&AgentTrace> {
        self.agents.iter().find(|a| a.id == id)
    }
}

pub const EVENT_HEADER: [&str; 8] = ["k", "agent", "kind", "name", "status", "value", "bound", "detail"];

pub fn agent_header(state_dim: usize, input_dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "agent", "mode", "triggered", "phase"].map(String::from).to_vec();
    h.extend((0..state_dim).map(|i| format!("e{i}")));
    h.extend((0..input_dim).map(|i| format!("u{i}")));
    h.extend(["s", "d_norm", "value", "x", "y", "theta", "ref_x", "ref_y"].map(String::from));
    h
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn agent_file_name(id: usize) -> String {
    format!("agent_{id}.csv")
}

pub fn write_agent_csv(path: &Path, trace: &AgentTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(agent_header(trace.state_dim, trace.input_dim))?;
    for r in &trace.rows {
        let mut rec = vec![
            r.k.to_string(),
            r.agent.to_string(),
            r.mode.clone(),
            u8::from(r.triggered).to_string(),
            r.phase.to_string(),
        ];
        rec.extend(r.e.iter().map(|&x| num(x)));
        rec.extend(r.u.iter().map(|&x| num(x)));
        rec.push(num(r.s));
        rec.push(num(r.d_norm));
        rec.push(opt(r.value));
        rec.extend((0..3).map(|i| opt(r.pose.map(|p| p[i]))));
        rec.extend((0..2).map(|i| opt(r.reference.map(|p| p[i]))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv(path: &Path, events: &[Event], verbosity: Verbosity) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVENT_HEADER)?;
    for e in events {
        if verbosity < Verbosity::Full && e.is_passing_hook() {
            continue;
        }
        w.write_record([
            e.k.to_string(),
            e.agent.to_string(),
            e.kind.as_str().to_string(),
            e.name.clone(),
            e.status.clone(),
            num(e.value),
            num(e.bound),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Tagged<'a, S: Serialize> {
    trace_version: u32,
    #[serde(flatten)]
    summary: &'a S,
}

/// Writes the agent CSVs, the event log (unless quiet) and `summary.toml`.
pub fn write_dir<S: Serialize>(dir: &Path, trace: &Trace, summary: &S, verbosity: Verbosity) -> Result<()> {
    fs::create_dir_all(dir)?;
    for a in &trace.agents {
        write_agent_csv(&dir.join(agent_file_name(a.id)), a)?;
    }
    if verbosity >= Verbosity::Events {
        write_events_csv(&dir.join("events.csv"), &trace.events, verbosity)?;
    }
    let text = toml::to_string(&Tagged {
        trace_version: TRACE_VERSION,
        summary,
    })?;
    fs::write(dir.join("summary.toml"), text)?;
    Ok(())
}

fn parse_f64(field: &str, col: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Trace(format!("line {line}: column {col}: {field:?} is not a number")))
}

fn parse_opt(field: &str, col: &str, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, col, line).map(Some)
    }
}

/// Reads an agent CSV written by [`write_agent_csv`], inferring dimensions
/// from the header.
pub fn read_agent_csv(path: &Path) -> Result<AgentTrace> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let state_dim = header.iter().filter(|h| h.starts_with('e') && h[1..].parse::<usize>().is_ok()).count();
    let input_dim = header.iter().filter(|h| h.starts_with('u') && h[1..].parse::<usize>().is_ok()).count();
    let expected = agent_header(state_dim, input_dim);
    if header != expected {
        let missing: Vec<&str> = expected.iter().filter(|c| !header.contains(c)).map(String::as_str).collect();
        return Err(Error::Trace(format!(
            "{}: header does not match trace version {TRACE_VERSION}; missing columns: [{}]",
            path.display(),
            missing.join(", ")
        )));
    }
    let mut rows = Vec::new();
    let mut id = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |c: usize| rec.get(c).unwrap_or("");
        let int = |c: usize| -> Result<usize> {
            f(c).parse()
                .map_err(|_| Error::Trace(format!("line {line}: column {}: {:?} is not an integer", header[c], f(c))))
        };
        let agent = int(1)?;
        if *id.get_or_insert(agent) != agent {
            return Err(Error::Trace(format!("line {line}: rows of several agents in one file")));
        }
        let mut c = 5;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v = (c..c + n).map(|j| parse_f64(f(j), &header[j], line)).collect::<Result<Vec<_>>>()?;
            c += n;
            Ok(v)
        };
        let e = take(state_dim)?;
        let u = take(input_dim)?;
        let rest = 5 + state_dim + input_dim;
        let o = |j: usize| parse_opt(f(rest + j), &header[rest + j], line);
        let pose = match (o(3)?, o(4)?, o(5)?) {
            (Some(x), Some(y), Some(t)) => Some([x, y, t]),
            _ => None,
        };
        let reference = match (o(6)?, o(7)?) {
            (Some(x), Some(y)) => Some([x, y]),
            _ => None,
        };
        rows.push(AgentRow {
            k: int(0)?,
            agent,
            mode: f(2).to_string(),
            triggered: f(3) == "1",
            phase: int(4)?,
            e,
            u,
            s: parse_f64(f(rest), "s", line)?,
            d_norm: parse_f64(f(rest + 1), "d_norm", line)?,
            value: o(2)?,
            pose,
            reference,
        });
    }
    let from_name = path
        .file_stem()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("agent_"))
        .and_then(|n| n.parse().ok());
    Ok(AgentTrace {
        id: id.or(from_name).ok_or_else(|| Error::Trace(format!("{}: empty trace of unknown agent", path.display())))?,
        state_dim,
        input_dim,
        rows,
    })
}

/// Reads every `agent_<id>.csv` in `dir`, ordered by id.
pub fn read_agents(dir: &Path) -> Result<Vec<AgentTrace>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_agent = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("agent_") && n.ends_with(".csv"));
        if is_agent {
            out.push(read_agent_csv(&path)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Trace(format!("{}: no agent_<id>.csv files", dir.display())));
    }
    out.sort_by_key(|a| a.id);
    Ok(out)
}

/// Reads `events.csv`.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(EVENT_HEADER) {
        return Err(Error::Trace(format!("{}: unexpected event header", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |c: usize| rec.get(c).unwrap_or("");
        let bad = |c: usize| Error::Trace(format!("line {line}: column {}: {:?}", EVENT_HEADER[c], f(c)));
        let nan_or = |c: usize| -> Result<f64> {
            if f(c).is_empty() {
                Ok(f64::NAN)
            } else {
                f(c).parse().map_err(|_| bad(c))
            }
        };
        out.push(Event {
            k: f(0).parse().map_err(|_| bad(0))?,
            agent: f(1).parse().map_err(|_| bad(1))?,
            kind: EventKind::parse(f(2)).ok_or_else(|| bad(2))?,
            name: f(3).to_string(),
            status: f(4).to_string(),
            value: nan_or(5)?,
            bound: nan_or(6)?,
            detail: f(7).to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace() -> AgentTrace {
        AgentTrace {
            id: 2,
            state_dim: 3,
            input_dim: 2,
            rows: vec![
                AgentRow {
                    k: 0,
                    agent: 2,
                    mode: "mpc".into(),
                    triggered: true,
                    phase: 1,
                    e: vec![0.1, 0.2, -0.1],
                    u: vec![0.3, -1.0 / 3.0],
                    s: 0.0,
                    d_norm: 1.25e-5,
                    value: Some(0.15),
                    pose: Some([1.0, 2.0, 0.5]),
                    reference: Some([1.1, 2.1]),
                },
                AgentRow {
                    k: 1,
                    agent: 2,
                    mode: "terminal".into(),
                    triggered: false,
                    phase: 0,
                    e: vec![0.0, 1e-300, 5.0],
                    u: vec![0.0, 0.0],
                    s: 0.02,
                    d_norm: 0.0,
                    value: None,
                    pose: None,
                    reference: None,
                },
            ],
        }
    }

    #[test]
    fn agent_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent_2.csv");
        let t = sample_trace();
        write_agent_csv(&path, &t).unwrap();
        assert_eq!(read_agent_csv(&path).unwrap(), t);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("k,agent,mode,triggered,phase,e0,e1,e2,u0,u1,s,d_norm,value,x,y,theta,ref_x,ref_y\n"));
    }

    #[test]
    fn empty_trace_keeps_its_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent_7.csv");
        let t = AgentTrace {
            id: 7,
            state_dim: 3,
            input_dim: 2,
            rows: vec![],
        };
        write_agent_csv(&path, &t).unwrap();
        assert_eq!(read_agent_csv(&path).unwrap(), t);
    }

    #[test]
    fn passing_hooks_are_dropped_below_full() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        let events = vec![
            Event::new(0, 1, EventKind::Solve, "ocp", "converged").values(1.0, f64::NAN),
            Event::new(0, 1, EventKind::HookResult, "lyapunov-decrease", "pass").values(-1.0, 0.0),
            Event::new(0, 1, EventKind::HookResult, "lyapunov-decrease", "fail").detail("case i"),
        ];
        write_events_csv(&path, &events, Verbosity::Events).unwrap();
        let back = read_events(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].status, "fail");
        write_events_csv(&path, &events, Verbosity::Full).unwrap();
        assert_eq!(read_events(&path).unwrap().len(), 3);
    }

    #[test]
    fn events_sort_by_step_agent_then_kind() {
        let mut t = Trace {
            agents: vec![],
            events: vec![
                Event::new(1, 1, EventKind::Sample, "a", ""),
                Event::new(0, 2, EventKind::Sample, "b", ""),
                Event::new(0, 1, EventKind::HookResult, "c", ""),
                Event::new(0, 1, EventKind::Sample, "d", ""),
                Event::new(0, 1, EventKind::HookResult, "e", ""),
            ],
        };
        t.sort_events();
        let names: Vec<_> = t.events.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["d", "c", "e", "b", "a"]);
    }

    #[test]
    fn verbosity_parsing() {
        assert_eq!(Verbosity::parse("0").unwrap(), Verbosity::Quiet);
        assert_eq!(Verbosity::parse("Events").unwrap(), Verbosity::Events);
        assert_eq!(Verbosity::parse("full").unwrap(), Verbosity::Full);
        assert!(Verbosity::parse("loud").is_err());
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent_1.csv");
        fs::write(&path, "k,agent,mode,e0,u0\n0,1,mpc,0,0\n").unwrap();
        match read_agent_csv(&path) {
            Err(Error::Trace(msg)) => assert!(msg.contains("missing columns: [triggered, phase, s,"), "{msg}"),
            other => panic!("expected a trace error, got {other:?}"),
        }
    }
}
