//! The sequential specification every checker replays against: an array of
//! words where `read` returns the current value and `mcas` writes all of its
//! new values iff every address still holds its expected value.

use std::fmt;

/// One operation against the word array.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    Read { addr: usize },
    Mcas { entries: Vec<(usize, u64, u64)> },
}

/// An operation's outcome. `None` is the placeholder on invoke events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpResult {
    Value(u64),
    Flag(bool),
    None,
}

impl fmt::Display for OpResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpResult::Value(v) => write!(f, "{v}"),
            OpResult::Flag(b) => write!(f, "{b}"),
            OpResult::None => write!(f, "-"),
        }
    }
}

/// Total map from address to application value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequentialState(pub Vec<u64>);

impl SequentialState {
    pub fn new(words: usize) -> SequentialState {
        SequentialState(vec![0; words])
    }

    pub fn from_words(words: &[u64]) -> SequentialState {
        SequentialState(words.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownAddress(pub usize);

impl fmt::Display for UnknownAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "address {} outside the sequential state", self.0)
    }
}

impl std::error::Error for UnknownAddress {}

/// Apply one operation. `read` never mutates; `mcas` is all-or-nothing.
pub fn sequential_apply(
    state: &mut SequentialState,
    op: &Op,
) -> Result<OpResult, UnknownAddress> {
    match op {
        Op::Read { addr } => {
            let v = *state.0.get(*addr).ok_or(UnknownAddress(*addr))?;
            Ok(OpResult::Value(v))
        }
        Op::Mcas { entries } => {
            for &(addr, _, _) in entries {
                if addr >= state.0.len() {
                    return Err(UnknownAddress(addr));
                }
            }
            if entries.iter().all(|&(addr, old, _)| state.0[addr] == old) {
                for &(addr, _, new) in entries {
                    state.0[addr] = new;
                }
                Ok(OpResult::Flag(true))
            } else {
                Ok(OpResult::Flag(false))
            }
        }
    }
}
