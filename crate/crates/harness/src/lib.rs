//! Verification harness and benchmark workloads for the MCAS engines:
//! sequential oracle, history recording and checking, deterministic replay,
//! invariant sinks, crash injection, and the array/list benchmarks behind
//! the `mcas-bench` binary.

pub mod checker;
pub mod history;
pub mod seqspec;
