//! Offline linearizability checking, plus the durable variant that checks a
//! crash image's survivors.
//!
//! The search is the classic tree walk over operation orderings constrained
//! by real-time precedence: an operation may linearize any time between its
//! invoke and its respond, and passing an un-linearized operation's respond
//! forces backtracking. Explored configurations — (set of linearized ops,
//! resulting state) — are memoized, and histories are first segmented at
//! quiescent points (moments with no operation in flight) so each searched
//! window stays small. A window that exhausts the node budget yields
//! [`Verdict::Inconclusive`], which is distinct from a violation and must be
//! treated as a hard failure by CI-style callers.

use std::collections::HashSet;

use mcas_core::CrashImage;

use crate::history::{well_formed, EventKind, HistoryEvent};
use crate::seqspec::{sequential_apply, Op, OpResult, SequentialState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    /// No ordering of the offending window replays through the sequential
    /// spec; the window is the smallest segment that failed.
    Violation { window: Vec<HistoryEvent> },
    Inconclusive { reason: String },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Maximum memoized configurations per window before giving up.
    pub budget_nodes: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { budget_nodes: 2_000_000 }
    }
}

/// Is some real-time-consistent total order of `events` a correct sequential
/// execution from `initial`?
pub fn check_linearizable(
    events: &[HistoryEvent],
    initial: &SequentialState,
    opts: CheckOptions,
) -> Verdict {
    check(events, initial, None, opts)
}

/// Durable variant: all completed operations of the pre-crash history plus
/// some subset of the in-flight ones must replay to exactly the state read
/// back after recovery. Including an in-flight op forces everything it
/// observed into the order too, because the replay itself validates every
/// expected value.
pub fn check_durable(
    events: &[HistoryEvent],
    initial: &SequentialState,
    image: &CrashImage,
    post_recovery_reads: &[u64],
    opts: CheckOptions,
) -> Verdict {
    if post_recovery_reads.len() != image.data_len {
        return Verdict::Inconclusive {
            reason: format!(
                "{} post-recovery reads against {} data words",
                post_recovery_reads.len(),
                image.data_len
            ),
        };
    }
    check(events, initial, Some(post_recovery_reads), opts)
}

struct Span {
    op: Op,
    result: OpResult,
    /// Completed ops must linearize with their recorded result; in-flight
    /// ones may linearize with whatever the state dictates, or not at all.
    completed: bool,
    invoke_ts: u64,
    respond_ts: Option<u64>,
}

fn pair_spans(events: &[HistoryEvent]) -> Vec<Span> {
    let mut pending: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut spans = Vec::new();
    for e in events {
        match e.kind {
            EventKind::Invoke => {
                pending.insert(e.thread, spans.len());
                spans.push(Span {
                    op: e.op.clone(),
                    result: OpResult::None,
                    completed: false,
                    invoke_ts: e.timestamp,
                    respond_ts: None,
                });
            }
            EventKind::Respond => {
                let idx = pending.remove(&e.thread).expect("well-formed history");
                spans[idx].result = e.result;
                spans[idx].completed = true;
                spans[idx].respond_ts = Some(e.timestamp);
            }
        }
    }
    spans
}

fn check(
    events: &[HistoryEvent],
    initial: &SequentialState,
    final_state: Option<&[u64]>,
    opts: CheckOptions,
) -> Verdict {
    if let Err(reason) = well_formed(events) {
        return Verdict::Inconclusive { reason };
    }

    // cut the history wherever nothing is in flight; spans never straddle a
    // cut, so each piece is checkable alone with the witness state threaded
    // through
    let mut segments: Vec<(Vec<Span>, &[HistoryEvent])> = Vec::new();
    let mut in_flight = 0usize;
    let mut seg_start = 0usize;
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::Invoke => in_flight += 1,
            EventKind::Respond => in_flight -= 1,
        }
        if in_flight == 0 {
            segments.push((pair_spans(&events[seg_start..=i]), &events[seg_start..=i]));
            seg_start = i + 1;
        }
    }
    if seg_start < events.len() {
        segments.push((pair_spans(&events[seg_start..]), &events[seg_start..]));
    }

    let mut state = initial.clone();
    let last = segments.len();
    for (n, (spans, window)) in segments.into_iter().enumerate() {
        let target = if n + 1 == last { final_state } else { None };
        match search_segment(&spans, &state, target, opts.budget_nodes) {
            SegmentOutcome::Witness(next) => state = next,
            SegmentOutcome::Violation => return Verdict::Violation { window: window.to_vec() },
            SegmentOutcome::Budget => {
                return Verdict::Inconclusive {
                    reason: format!("window of {} ops exceeded the search budget", spans.len()),
                }
            }
            SegmentOutcome::Malformed(reason) => return Verdict::Inconclusive { reason },
        }
    }
    if let Some(target) = final_state {
        // covers the empty-history case and a trailing fully-quiescent cut
        if state.0 != target {
            return Verdict::Violation { window: events.to_vec() };
        }
    }
    Verdict::Ok
}

enum SegmentOutcome {
    Witness(SequentialState),
    Violation,
    Budget,
    Malformed(String),
}

#[derive(Clone, Copy, PartialEq)]
enum EntryKind {
    Invoke(usize),
    Return(usize),
}

const NIL: usize = usize::MAX;

/// Doubly linked schedule of invoke/return entries, ordered by timestamp.
struct EntryList {
    kind: Vec<EntryKind>,
    prev: Vec<usize>,
    next: Vec<usize>,
    head: usize,
    /// entry index of each span's return, NIL if the span never responded
    ret_of: Vec<usize>,
}

impl EntryList {
    fn build(spans: &[Span]) -> EntryList {
        let mut stamped: Vec<(u64, EntryKind)> = Vec::with_capacity(spans.len() * 2);
        for (i, s) in spans.iter().enumerate() {
            stamped.push((s.invoke_ts, EntryKind::Invoke(i)));
            if let Some(ts) = s.respond_ts {
                stamped.push((ts, EntryKind::Return(i)));
            }
        }
        stamped.sort_by_key(|&(ts, _)| ts);
        let n = stamped.len();
        let kind: Vec<EntryKind> = stamped.into_iter().map(|(_, k)| k).collect();
        let mut ret_of = vec![NIL; spans.len()];
        for (e, k) in kind.iter().enumerate() {
            if let EntryKind::Return(i) = k {
                ret_of[*i] = e;
            }
        }
        let prev = (0..n).map(|e| if e == 0 { NIL } else { e - 1 }).collect();
        let next = (0..n).map(|e| if e + 1 == n { NIL } else { e + 1 }).collect();
        EntryList { kind, prev, next, head: if n == 0 { NIL } else { 0 }, ret_of }
    }

    fn unlink(&mut self, e: usize) {
        let (p, n) = (self.prev[e], self.next[e]);
        if p == NIL {
            self.head = n;
        } else {
            self.next[p] = n;
        }
        if n != NIL {
            self.prev[n] = p;
        }
    }

    fn relink(&mut self, e: usize) {
        let (p, n) = (self.prev[e], self.next[e]);
        if p == NIL {
            self.head = e;
        } else {
            self.next[p] = e;
        }
        if n != NIL {
            self.prev[n] = e;
        }
    }

    /// Remove a span's invoke entry and (if any) its return entry.
    fn lift(&mut self, invoke: usize, span: usize) {
        // return first: unlink updates neighbours by index, order matters
        if self.ret_of[span] != NIL {
            self.unlink(self.ret_of[span]);
        }
        self.unlink(invoke);
    }

    fn unlift(&mut self, invoke: usize, span: usize) {
        self.relink(invoke);
        if self.ret_of[span] != NIL {
            self.relink(self.ret_of[span]);
        }
    }
}

fn search_segment(
    spans: &[Span],
    initial: &SequentialState,
    target: Option<&[u64]>,
    budget: usize,
) -> SegmentOutcome {
    let mut list = EntryList::build(spans);
    let words = initial.0.len();
    let mask_blocks = spans.len().div_ceil(64).max(1);

    let mut state = initial.clone();
    let mut mask = vec![0u64; mask_blocks];
    let mut cache: HashSet<Box<[u64]>> = HashSet::new();
    // undo stack: (invoke entry, span, state before that op)
    let mut frames: Vec<(usize, usize, SequentialState)> = Vec::new();
    let mut nodes = 0usize;

    let target_ok = |state: &SequentialState, target: Option<&[u64]>| match target {
        Some(t) => state.0 == t,
        None => true,
    };

    let mut entry = list.head;
    loop {
        if entry == NIL {
            // walked past every remaining entry: only in-flight invokes are
            // left, every completed op is linearized
            if target_ok(&state, target) {
                return SegmentOutcome::Witness(state);
            }
            match frames.pop() {
                None => return SegmentOutcome::Violation,
                Some((inv, span, prev_state)) => {
                    state = prev_state;
                    mask[span / 64] &= !(1 << (span % 64));
                    list.unlift(inv, span);
                    entry = list.next[inv];
                    continue;
                }
            }
        }
        match list.kind[entry] {
            EntryKind::Invoke(i) => {
                let span = &spans[i];
                let mut next_state = state.clone();
                let accepted = match sequential_apply(&mut next_state, &span.op) {
                    Ok(result) => !span.completed || result == span.result,
                    Err(e) => return SegmentOutcome::Malformed(e.to_string()),
                };
                if accepted {
                    mask[i / 64] |= 1 << (i % 64);
                    let mut key = Vec::with_capacity(mask_blocks + words);
                    key.extend_from_slice(&mask);
                    key.extend_from_slice(&next_state.0);
                    if cache.insert(key.into_boxed_slice()) {
                        nodes += 1;
                        if nodes > budget {
                            return SegmentOutcome::Budget;
                        }
                        frames.push((entry, i, std::mem::replace(&mut state, next_state)));
                        list.lift(entry, i);
                        entry = list.head;
                        continue;
                    }
                    mask[i / 64] &= !(1 << (i % 64));
                }
                entry = list.next[entry];
            }
            EntryKind::Return(_) => {
                // an op that already responded is still un-linearized here:
                // this branch is dead, back out the most recent choice
                match frames.pop() {
                    None => return SegmentOutcome::Violation,
                    Some((inv, span, prev_state)) => {
                        state = prev_state;
                        mask[span / 64] &= !(1 << (span % 64));
                        list.unlift(inv, span);
                        entry = list.next[inv];
                    }
                }
            }
        }
    }
}
