//! Instrumentation hooks.
//!
//! Every shared-memory access the engine performs announces itself through
//! [`Instrument::schedule_point`] *before* executing, which is what the
//! deterministic replay scheduler and the crash injector key on. The
//! remaining callbacks report completed events (CASes by role, acquisitions,
//! status transitions, reclamation life cycle) for counters and invariant
//! sinks. Every method has an empty default body; [`NoopInstrument`] is the
//! zero-cost default.

use crate::desc::DescId;

/// Kind of shared-memory access about to be performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
    Cas,
    Flush,
    Fence,
}

/// Why a CAS was issued, for budget accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CasRole {
    /// Stage-1 installation of a per-word handle (or an RDCSS data install).
    Acquire,
    /// Status word finalization.
    Finalize,
    /// Deferred removal of an installed handle during detach.
    Detach,
    /// Harris third-phase unlock.
    Unlock,
    /// RDCSS completion or rollback of an installed RDCSS handle.
    RdcssResolve,
}

/// Which code path issued a fence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FenceRole {
    /// One of the two fences on the pmcas critical path.
    Op,
    /// Descriptor-pool initialization (charged to the allocator).
    Setup,
    /// Scan-time fence before reclaiming detached descriptors.
    Reclaim,
    /// The single fence at the end of recovery.
    Recovery,
}

/// Observer for engine events. Implementations must be cheap and must not
/// call back into the arena that invoked them (except the crash/replay
/// harnesses, which only touch the memory backend).
pub trait Instrument: Send + Sync {
    /// Called before every shared-memory access, with the accessing thread's
    /// slot (or [`crate::NO_SLOT`]) and the global word address.
    fn schedule_point(&self, _slot: usize, _kind: AccessKind, _addr: usize) {}
    /// A CAS completed (either outcome).
    fn cas_done(&self, _slot: usize, _role: CasRole, _addr: usize, _ok: bool) {}
    /// Stage 1 installed a handle for `desc` into `addr`.
    fn acquired(&self, _slot: usize, _addr: usize, _desc: DescId) {}
    /// A finalize CAS succeeded; `success` is the installed outcome.
    fn finalized(&self, _slot: usize, _desc: DescId, _success: bool) {}
    /// The read path encountered an ongoing operation and helped it;
    /// `depth` is the helping recursion depth (1 = direct help).
    fn helped(&self, _slot: usize, _depth: usize) {}
    fn flushed(&self, _slot: usize, _addr: usize) {}
    fn fenced(&self, _slot: usize, _role: FenceRole) {}
    fn retired(&self, _slot: usize, _desc: DescId) {}
    /// Detach finished for `desc`; `cas_count` CASes were actually issued.
    fn detached(&self, _slot: usize, _desc: DescId, _cas_count: usize) {}
    fn reclaimed(&self, _slot: usize, _desc: DescId) {}
    /// A quiescence scan ran; `progressed` tells whether every peer had
    /// progressed since the previous snapshot. On a stuck scan, `blocker`
    /// names the first peer still pinned and the epoch it was pinned at.
    fn scan(&self, _slot: usize, _progressed: bool, _blocker: Option<(usize, u64)>) {}
}

/// Default no-op observer.
pub struct NoopInstrument;

impl Instrument for NoopInstrument {}
