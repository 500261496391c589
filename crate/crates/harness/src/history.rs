//! Concurrent-history recording and the line-oriented history file format.
//!
//! Each worker thread records into its own [`ThreadLog`] (an append to a
//! plain `Vec`, no shared state beyond one global clock increment), and the
//! logs are merged by timestamp after the run. One event per line:
//!
//! ```text
//! threadId kind op args result timestamp
//! 0 invoke mcas 0:4:8,3:0:4 - 17
//! 0 respond mcas 0:4:8,3:0:4 true 23
//! 2 respond read 5 12 41
//! ```
//!
//! Args are `addr` for read and comma-joined `addr:old:new` triples for
//! mcas; `-` marks the absent result on invokes.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};
use std::sync::Arc;

use crate::seqspec::{Op, OpResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Invoke,
    Respond,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEvent {
    pub thread: usize,
    pub kind: EventKind,
    pub op: Op,
    pub result: OpResult,
    pub timestamp: u64,
}

/// Hands out per-thread logs stamped from one shared logical clock.
#[derive(Default)]
pub struct Recorder {
    clock: Arc<AtomicU64>,
}

impl Recorder {
    pub fn new() -> Recorder {
        Recorder::default()
    }

    pub fn log(&self, thread: usize) -> ThreadLog {
        ThreadLog { thread, clock: Arc::clone(&self.clock), events: Vec::new(), pending: None }
    }
}

/// One thread's event buffer. Alternation is enforced at record time:
/// `respond` pairs with the op of the preceding `invoke`.
pub struct ThreadLog {
    thread: usize,
    clock: Arc<AtomicU64>,
    events: Vec<HistoryEvent>,
    pending: Option<Op>,
}

impl ThreadLog {
    pub fn invoke(&mut self, op: Op) {
        assert!(self.pending.is_none(), "invoke while an op is outstanding");
        self.pending = Some(op.clone());
        let timestamp = self.clock.fetch_add(1, SeqCst);
        self.events.push(HistoryEvent {
            thread: self.thread,
            kind: EventKind::Invoke,
            op,
            result: OpResult::None,
            timestamp,
        });
    }

    pub fn respond(&mut self, result: OpResult) {
        let op = self.pending.take().expect("respond without an invoke");
        let timestamp = self.clock.fetch_add(1, SeqCst);
        self.events.push(HistoryEvent {
            thread: self.thread,
            kind: EventKind::Respond,
            op,
            result,
            timestamp,
        });
    }

    pub fn into_events(self) -> Vec<HistoryEvent> {
        self.events
    }
}

/// Merge per-thread logs into one timestamp-ordered history.
pub fn merge(logs: impl IntoIterator<Item = ThreadLog>) -> Vec<HistoryEvent> {
    let mut all: Vec<HistoryEvent> = logs.into_iter().flat_map(ThreadLog::into_events).collect();
    all.sort_by_key(|e| e.timestamp);
    all
}

fn format_args(op: &Op, out: &mut String) {
    match op {
        Op::Read { addr } => {
            let _ = write!(out, "{addr}");
        }
        Op::Mcas { entries } => {
            for (i, (addr, old, new)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{addr}:{old}:{new}");
            }
        }
    }
}

/// Serialize a history, one event per line.
pub fn to_lines(events: &[HistoryEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let kind = match e.kind {
            EventKind::Invoke => "invoke",
            EventKind::Respond => "respond",
        };
        let name = match e.op {
            Op::Read { .. } => "read",
            Op::Mcas { .. } => "mcas",
        };
        let _ = write!(out, "{} {} {} ", e.thread, kind, name);
        format_args(&e.op, &mut out);
        let _ = writeln!(out, " {} {}", e.result, e.timestamp);
    }
    out
}

#[derive(Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "history line {}: {}", self.line, self.reason)
    }
}

impl std::error::Error for ParseError {}

fn bad(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError { line, reason: reason.into() }
}

/// Parse the line format back into events. Blank lines and `#` comments are
/// allowed (fixtures carry commentary).
pub fn parse(text: &str) -> Result<Vec<HistoryEvent>, ParseError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(n, format!("expected 6 fields, got {}", fields.len())));
        }
        let thread = fields[0].parse().map_err(|_| bad(n, "bad thread id"))?;
        let kind = match fields[1] {
            "invoke" => EventKind::Invoke,
            "respond" => EventKind::Respond,
            other => return Err(bad(n, format!("unknown kind {other:?}"))),
        };
        let op = match fields[2] {
            "read" => Op::Read { addr: fields[3].parse().map_err(|_| bad(n, "bad read addr"))? },
            "mcas" => {
                let mut entries = Vec::new();
                for triple in fields[3].split(',') {
                    let parts: Vec<&str> = triple.split(':').collect();
                    if parts.len() != 3 {
                        return Err(bad(n, format!("bad entry {triple:?}")));
                    }
                    entries.push((
                        parts[0].parse().map_err(|_| bad(n, "bad entry addr"))?,
                        parts[1].parse().map_err(|_| bad(n, "bad entry old"))?,
                        parts[2].parse().map_err(|_| bad(n, "bad entry new"))?,
                    ));
                }
                Op::Mcas { entries }
            }
            other => return Err(bad(n, format!("unknown op {other:?}"))),
        };
        let result = match fields[4] {
            "-" => OpResult::None,
            "true" => OpResult::Flag(true),
            "false" => OpResult::Flag(false),
            v => OpResult::Value(v.parse().map_err(|_| bad(n, "bad result"))?),
        };
        let timestamp = fields[5].parse().map_err(|_| bad(n, "bad timestamp"))?;
        events.push(HistoryEvent { thread, kind, op, result, timestamp });
    }
    Ok(events)
}

/// Check the structural invariants: per-thread alternation of invoke and
/// respond over matching ops, and strictly increasing timestamps.
pub fn well_formed(events: &[HistoryEvent]) -> Result<(), String> {
    let mut pending: std::collections::HashMap<usize, &Op> = std::collections::HashMap::new();
    let mut last_ts = None;
    for e in events {
        if let Some(prev) = last_ts {
            if e.timestamp <= prev {
                return Err(format!("timestamp {} not increasing", e.timestamp));
            }
        }
        last_ts = Some(e.timestamp);
        match e.kind {
            EventKind::Invoke => {
                if pending.insert(e.thread, &e.op).is_some() {
                    return Err(format!("thread {} invoked twice", e.thread));
                }
                if e.result != OpResult::None {
                    return Err(format!("invoke at {} carries a result", e.timestamp));
                }
            }
            EventKind::Respond => match pending.remove(&e.thread) {
                Some(op) if *op == e.op => {}
                Some(_) => return Err(format!("thread {} responded to a different op", e.thread)),
                None => return Err(format!("thread {} responded without invoking", e.thread)),
            },
        }
    }
    Ok(())
}
