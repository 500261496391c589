//! Shared support for the integration tests: the sequential model the
//! engines are checked against, a counting instrument, and a tiny rng.

#![allow(dead_code)] // each test binary uses a different subset

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use mcas_core::{CasRole, DescId, FenceRole, Instrument};

/// Sequential specification of a multi-word CAS: if every targeted word
/// holds its expected value, write all the new values; otherwise change
/// nothing. This is the oracle — it is deliberately the dumbest possible
/// implementation and must never grow engine-like cleverness.
pub fn model_mcas(words: &mut [u64], entries: &[(usize, u64, u64)]) -> bool {
    if entries.iter().all(|&(a, old, _)| words[a] == old) {
        for &(a, _, new) in entries {
            words[a] = new;
        }
        true
    } else {
        false
    }
}

/// Per-role counters over the instrument callbacks.
#[derive(Default)]
pub struct Counters {
    pub acquire: AtomicU64,
    pub finalize: AtomicU64,
    pub detach: AtomicU64,
    pub unlock: AtomicU64,
    pub rdcss_resolve: AtomicU64,
    pub cas_failed: AtomicU64,
    pub op_fences: AtomicU64,
    pub setup_fences: AtomicU64,
    pub reclaim_fences: AtomicU64,
    pub recovery_fences: AtomicU64,
    pub flushes: AtomicU64,
    pub helped: AtomicU64,
    pub retired: AtomicU64,
    pub detached: AtomicU64,
    pub reclaimed: AtomicU64,
    pub scans: AtomicU64,
}

impl Counters {
    /// CASes that count against the per-operation budget (detach CASes are
    /// charged to reclamation, not to operations).
    pub fn budget_cases(&self) -> u64 {
        self.acquire.load(Relaxed)
            + self.finalize.load(Relaxed)
            + self.rdcss_resolve.load(Relaxed)
            + self.unlock.load(Relaxed)
    }
}

impl Instrument for Counters {
    fn cas_done(&self, _slot: usize, role: CasRole, _addr: usize, ok: bool) {
        let c = match role {
            CasRole::Acquire => &self.acquire,
            CasRole::Finalize => &self.finalize,
            CasRole::Detach => &self.detach,
            CasRole::Unlock => &self.unlock,
            CasRole::RdcssResolve => &self.rdcss_resolve,
        };
        c.fetch_add(1, Relaxed);
        if !ok {
            self.cas_failed.fetch_add(1, Relaxed);
        }
    }

    fn fenced(&self, _slot: usize, role: FenceRole) {
        let c = match role {
            FenceRole::Op => &self.op_fences,
            FenceRole::Setup => &self.setup_fences,
            FenceRole::Reclaim => &self.reclaim_fences,
            FenceRole::Recovery => &self.recovery_fences,
        };
        c.fetch_add(1, Relaxed);
    }

    fn flushed(&self, _slot: usize, _addr: usize) {
        self.flushes.fetch_add(1, Relaxed);
    }

    fn helped(&self, _slot: usize, _depth: usize) {
        self.helped.fetch_add(1, Relaxed);
    }

    fn retired(&self, _slot: usize, _desc: DescId) {
        self.retired.fetch_add(1, Relaxed);
    }

    fn detached(&self, _slot: usize, _desc: DescId, _cas_count: usize) {
        self.detached.fetch_add(1, Relaxed);
    }

    fn reclaimed(&self, _slot: usize, _desc: DescId) {
        self.reclaimed.fetch_add(1, Relaxed);
    }

    fn scan(&self, _slot: usize, _progressed: bool, _blocker: Option<(usize, u64)>) {
        self.scans.fetch_add(1, Relaxed);
    }
}

/// xorshift64*, good enough for test workloads.
pub fn xorshift(state: &mut u64) -> u64 {
    let mut x = *state;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    *state = x;
    x.wrapping_mul(0x2545_F491_4F6C_DD1D)
}
