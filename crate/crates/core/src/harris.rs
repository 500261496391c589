//! Three-phase MCAS baseline (volatile only).
//!
//! This is the classic descriptor algorithm this crate's two-phase engine is
//! measured against: words are acquired through a restricted double-compare
//! single-swap (RDCSS) that atomically checks the operation's status word is
//! still undecided while installing the operation's handle, one CAS decides
//! the status, and a third pass unlocks every word immediately. Uncontended
//! that is `3k + 1` CASes per k-word operation — each RDCSS costs an install
//! plus a resolve — against the two-phase engine's `k + 1`.
//!
//! [`HarrisArena::new_naive`] builds an arena whose acquire phase skips the
//! RDCSS control check and installs handles with a plain CAS on the expected
//! value. That variant is deliberately wrong: a thread paused across its
//! acquire can re-install the handle of an operation that has already been
//! decided and unlocked, re-applying its writes after later operations
//! overwrote them. It exists so the replay tests can demonstrate the ABA
//! failure and show the control check is what prevents it.

use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::collections::VecDeque;
use core::sync::atomic::{AtomicU64, Ordering::SeqCst};

use crate::arena::ArenaOptions;
use crate::desc::{
    status_code, is_finalized, Pool, FREE_CACHE, PRESSURE_ROUNDS, PRESSURE_SPINS, SLOT_DETACHED,
    SLOT_FREE, SLOT_LIVE, STATUS_ACTIVE, STATUS_FAILED, STATUS_SUCCESSFUL,
};
use crate::epoch::EpochRegistry;
use crate::error::McasError;
use crate::instrument::{AccessKind, CasRole, Instrument, NoopInstrument};
use crate::mem::{MemBackend, VolatileMem};

static ARENA_IDS: AtomicU64 = AtomicU64::new(1);

// word tagging: two low bits (application values are multiples of 4)
const TAG_MASK: u64 = 0b11;
const TAG_MCAS: u64 = 0b01;
const TAG_RDCSS: u64 = 0b10;

#[inline]
pub fn is_mcas_handle(raw: u64) -> bool {
    raw & TAG_MASK == TAG_MCAS
}

#[inline]
pub fn is_rdcss_handle(raw: u64) -> bool {
    raw & TAG_MASK == TAG_RDCSS
}

#[inline]
fn mcas_handle(base: usize) -> u64 {
    ((base as u64) << 2) | TAG_MCAS
}

#[inline]
fn rdcss_handle(base: usize) -> u64 {
    ((base as u64) << 2) | TAG_RDCSS
}

#[inline]
fn handle_base(raw: u64) -> usize {
    (raw >> 2) as usize
}

/// Reject values that would collide with either tag.
fn encode_value(v: u64) -> Result<u64, McasError> {
    if v & TAG_MASK != 0 {
        Err(McasError::MarkedValue(v))
    } else {
        Ok(v)
    }
}

// operation record: status, width, then [addr, old, new] per entry
const OP_HEADER: usize = 2;
const OP_ENTRY: usize = 3;

#[inline]
fn op_entry_addr(base: usize, i: usize) -> usize {
    base + OP_HEADER + OP_ENTRY * i
}

// rdcss record: control addr, control expect, data addr, data expect, new
const RDCSS_WORDS: usize = 5;

const KIND_OP: u8 = 0;
const KIND_RDCSS: u8 = 1;

/// Per-thread state for a [`HarrisArena`].
pub struct HarrisHandle {
    slot: usize,
    arena_id: u64,
    free_op: Vec<usize>,
    free_rdcss: Vec<usize>,
    /// Unlocked records awaiting recycling: (snapshot stamp, slot). Two
    /// queues because they have different recycling constraints: rdcss
    /// records may be recycled even from a scan inside our own epoch (no
    /// frame of ours can still reference a completed one), op records only
    /// from op boundaries (a helping frame further up the stack may still be
    /// reading one we retired in a nested frame).
    retired_op: VecDeque<(u64, usize)>,
    retired_rdcss: VecDeque<(u64, usize)>,
    last_seen: Vec<u64>,
    snap_gen: u64,
    scans: u64,
    depth: usize,
}

impl HarrisHandle {
    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn retired_backlog(&self) -> usize {
        self.retired_op.len() + self.retired_rdcss.len()
    }

    pub fn scan_count(&self) -> u64 {
        self.scans
    }
}

/// Volatile arena driven by the three-phase algorithm. Deliberately the same
/// ownership shape as the two-phase arena so benchmarks and stress tests can
/// treat the two uniformly.
pub struct HarrisArena {
    mem: VolatileMem,
    inst: Arc<dyn Instrument>,
    op_pool: Pool,
    rdcss_pool: Pool,
    epochs: EpochRegistry,
    data_len: usize,
    retire_threshold: usize,
    naive: bool,
    arena_id: u64,
}

impl HarrisArena {
    pub fn new(opts: ArenaOptions) -> HarrisArena {
        HarrisArena::build(opts, Arc::new(NoopInstrument), false)
    }

    /// The control-check-free variant. Only suitable for demonstrating why
    /// the control check exists; see the module docs.
    pub fn new_naive(opts: ArenaOptions) -> HarrisArena {
        HarrisArena::build(opts, Arc::new(NoopInstrument), true)
    }

    pub fn with_instrument(opts: ArenaOptions, inst: Arc<dyn Instrument>) -> HarrisArena {
        HarrisArena::build(opts, inst, false)
    }

    pub fn with_instrument_naive(opts: ArenaOptions, inst: Arc<dyn Instrument>) -> HarrisArena {
        HarrisArena::build(opts, inst, true)
    }

    fn build(opts: ArenaOptions, inst: Arc<dyn Instrument>, naive: bool) -> HarrisArena {
        assert!(opts.data_words > 0, "arena needs at least one data word");
        assert!(opts.max_threads > 0, "arena needs at least one thread slot");
        assert!(opts.max_width >= 1);
        let op_slots = opts.max_threads * opts.pool_slots_per_thread;
        // rdcss records burn k per operation, so give that pool more slack
        let rdcss_slots = 2 * op_slots;
        let op_slot_words = OP_HEADER + OP_ENTRY * opts.max_width;
        let op_base = opts.data_words;
        let rdcss_base = op_base + op_slots * op_slot_words;
        let total = rdcss_base + rdcss_slots * RDCSS_WORDS;
        HarrisArena {
            mem: VolatileMem::with_words(total),
            inst,
            op_pool: Pool::with_layout(op_base, op_slot_words, opts.max_width, op_slots),
            rdcss_pool: Pool::with_layout(rdcss_base, RDCSS_WORDS, 1, rdcss_slots),
            epochs: EpochRegistry::new(opts.max_threads),
            data_len: opts.data_words,
            retire_threshold: opts.retire_threshold,
            naive,
            arena_id: ARENA_IDS.fetch_add(1, SeqCst),
        }
    }

    pub fn data_len(&self) -> usize {
        self.data_len
    }

    pub fn max_width(&self) -> usize {
        self.op_pool.max_width
    }

    pub fn is_naive(&self) -> bool {
        self.naive
    }

    pub fn init_words(&self, start: usize, values: &[u64]) -> Result<(), McasError> {
        if start + values.len() > self.data_len {
            return Err(McasError::InvalidAddress(start + values.len() - 1));
        }
        for (i, &v) in values.iter().enumerate() {
            encode_value(v)?;
            self.mem.store(start + i, v);
        }
        Ok(())
    }

    pub fn register_thread(&self) -> Result<HarrisHandle, McasError> {
        let slot = self.epochs.register()?;
        let mut last_seen = Vec::new();
        self.epochs.snapshot_into(&mut last_seen);
        Ok(HarrisHandle {
            slot,
            arena_id: self.arena_id,
            free_op: Vec::new(),
            free_rdcss: Vec::new(),
            retired_op: VecDeque::new(),
            retired_rdcss: VecDeque::new(),
            last_seen,
            snap_gen: 0,
            scans: 0,
            depth: 0,
        })
    }

    fn check_handle(&self, h: &HarrisHandle) {
        assert_eq!(h.arena_id, self.arena_id, "thread handle belongs to a different arena");
    }

    // ---- instrumented primitives ----------------------------------------------------

    #[inline]
    fn ld(&self, slot: usize, addr: usize) -> u64 {
        self.inst.schedule_point(slot, AccessKind::Load, addr);
        self.mem.load(addr)
    }

    #[inline]
    fn st(&self, slot: usize, addr: usize, val: u64) {
        self.inst.schedule_point(slot, AccessKind::Store, addr);
        self.mem.store(addr, val);
    }

    #[inline]
    fn cas(&self, slot: usize, role: CasRole, addr: usize, expect: u64, new: u64) -> Result<u64, u64> {
        self.inst.schedule_point(slot, AccessKind::Cas, addr);
        let r = self.mem.cas(addr, expect, new);
        self.inst.cas_done(slot, role, addr, r.is_ok());
        r
    }

    // ---- public operations -----------------------------------------------------------

    /// Read one word, helping whatever operation currently holds it.
    pub fn read(&self, h: &mut HarrisHandle, addr: usize) -> u64 {
        self.check_handle(h);
        assert!(addr < self.data_len, "read outside data region");
        self.epochs.enter(h.slot).expect("epoch parity");
        let v = loop {
            let raw = self.ld(h.slot, addr);
            if is_rdcss_handle(raw) {
                self.rdcss_complete(h, handle_base(raw));
                continue;
            }
            if is_mcas_handle(raw) {
                h.depth += 1;
                self.inst.helped(h.slot, h.depth);
                self.op_inner(h, handle_base(raw));
                h.depth -= 1;
                continue;
            }
            break raw;
        };
        self.epochs.exit(h.slot).expect("epoch parity");
        self.maybe_scan(h);
        v
    }

    /// Atomically replace every `(addr, expected, new)` or none; returns
    /// whether the operation succeeded.
    pub fn mcas(&self, h: &mut HarrisHandle, entries: &[(usize, u64, u64)]) -> Result<bool, McasError> {
        self.check_handle(h);
        let base = self.prepare(h, entries)?;
        self.epochs.enter(h.slot).expect("epoch parity");
        let ok = self.op_inner(h, base);
        self.epochs.exit(h.slot).expect("epoch parity");
        self.maybe_scan(h);
        Ok(ok)
    }

    fn prepare(&self, h: &mut HarrisHandle, entries: &[(usize, u64, u64)]) -> Result<usize, McasError> {
        if entries.is_empty() {
            return Err(McasError::EmptyDescriptor);
        }
        if entries.len() > self.op_pool.max_width {
            return Err(McasError::TooWide { requested: entries.len(), max: self.op_pool.max_width });
        }
        let mut sorted: Vec<(usize, u64, u64)> = entries.to_vec();
        sorted.sort_unstable_by_key(|e| e.0);
        for pair in sorted.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(McasError::DuplicateAddress(pair[0].0));
            }
        }
        for &(addr, old, new) in &sorted {
            if addr >= self.data_len {
                return Err(McasError::InvalidAddress(addr));
            }
            encode_value(old)?;
            encode_value(new)?;
        }
        let slot_idx = self.alloc(h, KIND_OP).ok_or(McasError::PoolExhausted)?;
        // top up the rdcss cache while still outside the epoch, so the
        // acquires this operation itself issues never hit allocation
        // pressure at a point where recycling is restricted. a short cache
        // is not an error — helping storms may outrun any reserve, and the
        // inside-epoch allocation path copes.
        if h.free_rdcss.len() < sorted.len() {
            self.scan_internal(h, true);
            while h.free_rdcss.len() < sorted.len() && self.rdcss_pool.reserve(&mut h.free_rdcss) {}
        }
        let base = self.op_pool.slot_base(slot_idx);
        self.st(h.slot, base, STATUS_ACTIVE);
        self.st(h.slot, base + 1, sorted.len() as u64);
        for (i, &(addr, old, new)) in sorted.iter().enumerate() {
            let e = op_entry_addr(base, i);
            self.st(h.slot, e, addr as u64);
            self.st(h.slot, e + 1, old);
            self.st(h.slot, e + 2, new);
        }
        Ok(base)
    }

    // ---- the three phases --------------------------------------------------------------

    fn op_inner(&self, h: &mut HarrisHandle, base: usize) -> bool {
        let slot = h.slot;
        let width = self.ld(slot, base + 1) as usize;
        if status_code(self.ld(slot, base)) == STATUS_ACTIVE {
            // phase 1: acquire every word, or decide failure
            let mut outcome = STATUS_SUCCESSFUL;
            'words: for i in 0..width {
                let entry = op_entry_addr(base, i);
                let addr = self.ld(slot, entry) as usize;
                let old = self.ld(slot, entry + 1);
                loop {
                    let witnessed = if self.naive {
                        self.acquire_naive(h, base, addr, old)
                    } else {
                        self.acquire_rdcss(h, base, addr, old)
                    };
                    if witnessed == mcas_handle(base) {
                        continue 'words; // already installed (possibly helped)
                    }
                    if is_mcas_handle(witnessed) {
                        // another operation holds the word: help it, retry
                        h.depth += 1;
                        self.inst.helped(slot, h.depth);
                        self.op_inner(h, handle_base(witnessed));
                        h.depth -= 1;
                        continue;
                    }
                    if witnessed != old {
                        outcome = STATUS_FAILED;
                        break 'words;
                    }
                    continue 'words; // witnessed the expected value: acquired
                }
            }
            // phase 2: one CAS decides
            if self
                .cas(slot, CasRole::Finalize, base, STATUS_ACTIVE, outcome)
                .is_ok()
            {
                self.inst
                    .finalized(slot, self.op_pool.id_of_base(base), outcome == STATUS_SUCCESSFUL);
            }
        }
        // phase 3: unlock every word the operation may still hold
        let status = status_code(self.ld(slot, base));
        debug_assert!(is_finalized(status));
        let success = status == STATUS_SUCCESSFUL;
        for i in 0..width {
            let entry = op_entry_addr(base, i);
            let addr = self.ld(slot, entry) as usize;
            let value = if success {
                self.ld(slot, entry + 2)
            } else {
                self.ld(slot, entry + 1)
            };
            let _ = self.cas(slot, CasRole::Unlock, addr, mcas_handle(base), value);
        }
        // exactly one participant wins this transition and owns retirement;
        // the record stays dereferenceable until the epoch gate proves every
        // helper's unlock pass is done.
        let slot_idx = self.op_pool.slot_of_base(base);
        if self.op_pool.transition(slot_idx, SLOT_LIVE, SLOT_DETACHED).is_ok() {
            self.inst.retired(slot, self.op_pool.id_of_base(base));
            self.retire(h, KIND_OP, slot_idx);
        }
        success
    }

    /// Install this operation's handle on `addr` if the word holds `old` and
    /// the operation is still undecided. Returns the witnessed word content:
    /// `old` means installed (or rolled back after a late decision, which is
    /// indistinguishable and harmless), our own handle means already done.
    fn acquire_rdcss(&self, h: &mut HarrisHandle, base: usize, addr: usize, old: u64) -> u64 {
        let slot = h.slot;
        let r_idx = self.alloc(h, KIND_RDCSS).expect("rdcss record pool exhausted");
        let r = self.rdcss_pool.slot_base(r_idx);
        self.st(slot, r, base as u64); // control: the operation's status word
        self.st(slot, r + 1, STATUS_ACTIVE); // expected control value
        self.st(slot, r + 2, addr as u64);
        self.st(slot, r + 3, old);
        self.st(slot, r + 4, mcas_handle(base));
        let witnessed = loop {
            match self.cas(slot, CasRole::Acquire, addr, old, rdcss_handle(r)) {
                Ok(_) => {
                    self.rdcss_complete(h, r);
                    self.inst.acquired(slot, addr, self.op_pool.id_of_base(base));
                    break old;
                }
                Err(actual) if is_rdcss_handle(actual) => {
                    // help the blocking rdcss resolve, then retry ours
                    self.rdcss_complete(h, handle_base(actual));
                    continue;
                }
                Err(actual) => break actual,
            }
        };
        // the record may still be dereferenced by helpers that saw its
        // handle before the resolve; recycling waits for quiescence.
        self.rdcss_pool
            .transition(r_idx, SLOT_LIVE, SLOT_DETACHED)
            .expect("rdcss record retired twice");
        self.retire(h, KIND_RDCSS, r_idx);
        witnessed
    }

    /// The deliberately broken acquire: no control check, plain CAS.
    fn acquire_naive(&self, h: &mut HarrisHandle, base: usize, addr: usize, old: u64) -> u64 {
        let slot = h.slot;
        match self.cas(slot, CasRole::Acquire, addr, old, mcas_handle(base)) {
            Ok(_) => {
                self.inst.acquired(slot, addr, self.op_pool.id_of_base(base));
                old
            }
            Err(actual) => actual,
        }
    }

    /// Resolve an installed rdcss handle: keep the new value if the control
    /// word still holds its expected value, else roll back.
    fn rdcss_complete(&self, h: &mut HarrisHandle, r: usize) {
        let slot = h.slot;
        let control = self.ld(slot, r) as usize;
        let control_expect = self.ld(slot, r + 1);
        let data = self.ld(slot, r + 2) as usize;
        let data_expect = self.ld(slot, r + 3);
        let new = self.ld(slot, r + 4);
        let value = if status_code(self.ld(slot, control)) == status_code(control_expect) {
            new
        } else {
            data_expect
        };
        // losing this CAS just means another helper resolved first
        let _ = self.cas(slot, CasRole::RdcssResolve, data, rdcss_handle(r), value);
    }

    // ---- reclamation ---------------------------------------------------------------------

    fn alloc(&self, h: &mut HarrisHandle, kind: u8) -> Option<usize> {
        let (pool, free) = match kind {
            KIND_OP => (&self.op_pool, &mut h.free_op),
            _ => (&self.rdcss_pool, &mut h.free_rdcss),
        };
        if let Some(slot_idx) = pool.alloc(free) {
            return Some(slot_idx);
        }
        self.alloc_stalled(h, kind)
    }

    /// Dry pool: reclamation is stalled behind a descheduled peer; scan and
    /// retry until it resumes (see [`PRESSURE_ROUNDS`]). The caller's
    /// position shapes the wait. Outside the epoch it may recycle anything.
    /// Inside (rdcss allocation during an acquire), op records stay off
    /// limits — a helping frame above us may still be reading one we
    /// retired — and our own pinned epoch would stall every peer's scan for
    /// as long as we wait, so the wait *parks*: at this point the stack
    /// holds no rdcss references (the allocation is the first thing an
    /// acquire does, and resolves re-derive theirs), which is exactly what
    /// the relaxed scan criterion needs to keep rdcss recycling moving for
    /// everyone, ourselves included.
    #[cold]
    fn alloc_stalled(&self, h: &mut HarrisHandle, kind: u8) -> Option<usize> {
        let inside = self.epochs.is_inside(h.slot);
        debug_assert!(!inside || kind == KIND_RDCSS, "op records allocate at boundaries");
        if inside {
            self.epochs.set_parked(h.slot, true);
        }
        let mut got = None;
        for _ in 0..PRESSURE_ROUNDS {
            self.scan_internal(h, !inside);
            let (pool, free) = match kind {
                KIND_OP => (&self.op_pool, &mut h.free_op),
                _ => (&self.rdcss_pool, &mut h.free_rdcss),
            };
            if let Some(slot_idx) = pool.alloc(free) {
                got = Some(slot_idx);
                break;
            }
            for _ in 0..PRESSURE_SPINS {
                core::hint::spin_loop();
            }
        }
        if inside {
            self.epochs.set_parked(h.slot, false);
        }
        got
    }

    /// Queue an already-transitioned record for recycling. Callers move the
    /// slot to the detached state first. No scan here — retirement happens
    /// inside pinned epochs, where snapshots cannot observe peer progress;
    /// the public entry points scan at op boundaries instead.
    fn retire(&self, h: &mut HarrisHandle, kind: u8, slot_idx: usize) {
        let stamp = h.snap_gen;
        match kind {
            KIND_OP => h.retired_op.push_back((stamp, slot_idx)),
            _ => h.retired_rdcss.push_back((stamp, slot_idx)),
        }
    }

    fn maybe_scan(&self, h: &mut HarrisHandle) {
        if h.retired_op.len() + h.retired_rdcss.len() >= self.retire_threshold {
            self.scan_internal(h, true);
        }
    }

    /// Run one quiescence scan and recycle whatever it proves unreachable.
    /// Returns whether every peer had progressed.
    pub fn quiescence_scan(&self, h: &mut HarrisHandle) -> bool {
        self.check_handle(h);
        self.scan_internal(h, true)
    }

    fn scan_internal(&self, h: &mut HarrisHandle, include_ops: bool) -> bool {
        let outcome = self.epochs.snapshot_progress(h.slot, &mut h.last_seen);
        h.snap_gen += 1;
        h.scans += 1;
        self.inst.scan(h.slot, outcome.progressed, outcome.blocker);
        if !outcome.progressed_relaxed {
            return false;
        }
        let cutoff = h.snap_gen.saturating_sub(2);
        let slot = h.slot;
        // rdcss records qualify under the relaxed criterion — a parked peer
        // holds no references to any. op records need strict progress.
        self.drain_retired(slot, cutoff, &mut h.retired_rdcss, &self.rdcss_pool, &mut h.free_rdcss);
        if include_ops && outcome.progressed {
            self.drain_retired(slot, cutoff, &mut h.retired_op, &self.op_pool, &mut h.free_op);
        }
        outcome.progressed
    }

    fn drain_retired(
        &self,
        slot: usize,
        cutoff: u64,
        queue: &mut VecDeque<(u64, usize)>,
        pool: &Pool,
        free: &mut Vec<usize>,
    ) {
        while let Some(&(stamp, slot_idx)) = queue.front() {
            if stamp > cutoff {
                break;
            }
            queue.pop_front();
            pool.transition(slot_idx, SLOT_DETACHED, SLOT_FREE)
                .expect("recycle of non-retired record");
            self.inst.reclaimed(slot, pool.id_of(slot_idx));
            // records drift to whichever participant won the detach race, so
            // per-thread free lists are bounded and overflow to the pool's
            // shared stack
            if free.len() < FREE_CACHE {
                free.push(slot_idx);
            } else {
                pool.push_free_shared(slot_idx);
            }
        }
    }

    // ---- test support ----------------------------------------------------------------------

    /// Quiescent-state audit: no data word may hold a handle of a freed or
    /// recycled record.
    pub fn audit_handles(&self) -> Result<(), (usize, u8)> {
        for addr in 0..self.data_len {
            let raw = self.mem.load(addr);
            let (pool, base) = if is_mcas_handle(raw) {
                (&self.op_pool, handle_base(raw))
            } else if is_rdcss_handle(raw) {
                (&self.rdcss_pool, handle_base(raw))
            } else {
                continue;
            };
            let state = pool.state(pool.slot_of_base(base));
            if state == SLOT_FREE {
                return Err((addr, state));
            }
        }
        Ok(())
    }

    pub fn raw_words(&self) -> Vec<u64> {
        (0..self.data_len).map(|a| self.mem.load(a)).collect()
    }

    /// Distinct (operation, rdcss) record slots ever bump-allocated.
    /// Recycling keeps both far below the operation count on long runs.
    pub fn pool_slots_touched(&self) -> (usize, usize) {
        (self.op_pool.allocated(), self.rdcss_pool.allocated())
    }
}
