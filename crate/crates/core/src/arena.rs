//! The word arena and the MCAS engine.
//!
//! An [`Arena`] owns all target words plus the descriptor pool region, so the
//! library mediates every access (which is what lets the simulated persistent
//! backend interpose, recovery enumerate descriptors, and instrumentation see
//! every shared-memory operation). Threads register once and drive the API
//! through their [`ThreadHandle`], which owns all single-writer state: the
//! descriptor free list, the two retire lists, cached peer epochs, and the
//! pending-flush set.
//!
//! The engine itself is Listing-shaped: `read_internal` resolves a word to
//! `(content, value)`, helping any ongoing operation it meets; `mcas_inner`
//! acquires each target word in ascending address order by installing the
//! word's entry handle, finalizes the status with one CAS, and leaves the
//! installed handles in place for deferred detach. On a durable backend it
//! additionally flushes the target words + fences before finalizing, installs
//! the status together with the dirty bit, and flushes + fences the status
//! before clearing the bit — two fences total on the uncontended path.

use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::collections::VecDeque;
use core::sync::atomic::{AtomicU64, Ordering::SeqCst};

use crate::desc::{
    status_code, is_finalized, record_words, DescId, Pool, FREE_CACHE, PRESSURE_ROUNDS,
    PRESSURE_SPINS, SLOT_DETACHED, SLOT_FREE, SLOT_LIVE, SLOT_RETIRED, STATUS_ACTIVE, STATUS_DIRTY,
    STATUS_FAILED, STATUS_SUCCESSFUL,
};
use crate::epoch::{xorshift64, EpochRegistry};
use crate::error::McasError;
use crate::instrument::{AccessKind, CasRole, FenceRole, Instrument, NoopInstrument};
use crate::mem::{MemBackend, SimPmem, VolatileMem};
use crate::word::{decode_handle, encode_handle, encode_value, is_handle};

static ARENA_IDS: AtomicU64 = AtomicU64::new(1);

/// Construction parameters. `new` fills in the defaults; the with_* methods
/// override individual knobs.
#[derive(Debug, Clone)]
pub struct ArenaOptions {
    /// Number of application-visible data words.
    pub data_words: usize,
    /// Registration capacity.
    pub max_threads: usize,
    /// Maximum entries per descriptor (record slabs are sized for this).
    pub max_width: usize,
    /// Retired descriptors accumulated before a scan is triggered.
    pub retire_threshold: usize,
    /// Reader-assisted detach fires on average once per this many candidate
    /// reads; 0 disables it. Forced off on the durable backend.
    pub assist_one_in: u32,
    /// Descriptor record slots per registerable thread.
    pub pool_slots_per_thread: usize,
    /// Seed for the per-thread assist PRNGs.
    pub seed: u64,
}

impl ArenaOptions {
    pub fn new(data_words: usize, max_threads: usize) -> ArenaOptions {
        let retire_threshold = 32;
        ArenaOptions {
            data_words,
            max_threads,
            max_width: 8,
            retire_threshold,
            assist_one_in: 256,
            pool_slots_per_thread: 3 * retire_threshold + 64,
            seed: 0x9E37_79B9_7F4A_7C15,
        }
    }

    pub fn with_max_width(mut self, w: usize) -> Self {
        self.max_width = w;
        self
    }

    pub fn with_retire_threshold(mut self, t: usize) -> Self {
        self.retire_threshold = t.max(1);
        self.pool_slots_per_thread = self.pool_slots_per_thread.max(3 * t + 64);
        self
    }

    pub fn with_assist_one_in(mut self, n: u32) -> Self {
        self.assist_one_in = n;
        self
    }

    pub fn with_pool_slots_per_thread(mut self, n: usize) -> Self {
        self.pool_slots_per_thread = n;
        self
    }

    pub fn with_seed(mut self, s: u64) -> Self {
        self.seed = s;
        self
    }
}

/// Per-thread state. All fields are single-writer; the handle is `Send` but
/// deliberately not shareable.
pub struct ThreadHandle {
    slot: usize,
    arena_id: u64,
    /// Finalized but not yet detached records: (snapshot stamp, slot index).
    finalized: VecDeque<(u64, usize)>,
    /// Detached but not yet reclaimed records.
    detached: VecDeque<(u64, usize)>,
    /// Recycled record slots ready for reuse.
    free: Vec<usize>,
    /// Cached peer epochs from this thread's previous scan snapshot.
    last_seen: Vec<u64>,
    /// Separate snapshot cache for reader-assist scans.
    assist_last_seen: Vec<u64>,
    /// Snapshots this thread has taken.
    snap_gen: u64,
    scans: u64,
    rng: u64,
    /// Captured-but-unfenced flushes (durable backend only).
    pending: Vec<(usize, u64)>,
    /// Current helping recursion depth (diagnostics).
    depth: usize,
}

impl ThreadHandle {
    pub fn slot(&self) -> usize {
        self.slot
    }

    /// Finalized descriptors awaiting detach.
    pub fn finalized_backlog(&self) -> usize {
        self.finalized.len()
    }

    /// Detached descriptors awaiting reclamation.
    pub fn detached_backlog(&self) -> usize {
        self.detached.len()
    }

    /// Record slots available for reuse without bump allocation.
    pub fn free_slots(&self) -> usize {
        self.free.len()
    }

    /// Quiescence scans this thread has run.
    pub fn scan_count(&self) -> u64 {
        self.scans
    }

    pub(crate) fn push_finalized(&mut self, slot_idx: usize) {
        let stamp = self.snap_gen;
        self.finalized.push_back((stamp, slot_idx));
    }

    pub(crate) fn scan_state(&mut self) -> (&mut Vec<u64>, &mut u64, &mut u64) {
        (&mut self.last_seen, &mut self.snap_gen, &mut self.scans)
    }
}

/// An unsubmitted descriptor. Consumed by [`Arena::mcas`], which prevents
/// double submission at the type level.
pub struct Descriptor {
    pub(crate) base: usize,
    id: DescId,
}

impl Descriptor {
    /// Stable identity of this descriptor incarnation (usable with the
    /// retire/detach test hooks after submission).
    pub fn id(&self) -> DescId {
        self.id
    }
}

pub type VolatileArena = Arena<VolatileMem>;
pub type PmArena = Arena<SimPmem>;

/// A registered word arena over a memory backend. See the module docs.
pub struct Arena<B: MemBackend> {
    mem: Arc<B>,
    inst: Arc<dyn Instrument>,
    pub(crate) pool: Pool,
    pub(crate) epochs: EpochRegistry,
    data_len: usize,
    retire_threshold: usize,
    assist_one_in: u32,
    seed: u64,
    arena_id: u64,
}

impl Arena<VolatileMem> {
    pub fn new_volatile(opts: ArenaOptions) -> VolatileArena {
        Arena::with_instrument(opts, Arc::new(NoopInstrument))
    }
}

impl Arena<SimPmem> {
    pub fn new_durable(opts: ArenaOptions) -> PmArena {
        Arena::with_instrument(opts, Arc::new(NoopInstrument))
    }
}

impl<B: MemBackend> Arena<B> {
    pub fn with_instrument(opts: ArenaOptions, inst: Arc<dyn Instrument>) -> Arena<B> {
        let slots = opts.max_threads * opts.pool_slots_per_thread;
        let total = opts.data_words + slots * record_words(opts.max_width);
        Arena::from_backend(B::with_words(total), &opts, slots, inst)
    }

    /// Assemble an arena around an existing backend (recovery path). The
    /// backend must already be sized for `opts.data_words` plus `total_slots`
    /// record slabs of `opts.max_width`.
    pub(crate) fn from_backend(
        mem: B,
        opts: &ArenaOptions,
        total_slots: usize,
        inst: Arc<dyn Instrument>,
    ) -> Arena<B> {
        assert!(opts.data_words > 0, "arena needs at least one data word");
        assert!(opts.max_threads > 0, "arena needs at least one thread slot");
        assert!(opts.max_width >= 1);
        let pool = Pool::new(opts.data_words, opts.max_width, total_slots);
        assert_eq!(opts.data_words + pool.total_words(), mem.len(), "backend size mismatch");
        // reader assist is a volatile-read optimization; under the strict
        // flush model a single-address detach bypassing the generation-gated
        // scan can let a stale pending flush outlive recycling, so the
        // durable backend keeps it off.
        let assist_one_in = if B::DURABLE { 0 } else { opts.assist_one_in };
        Arena {
            mem: Arc::new(mem),
            inst,
            pool,
            epochs: EpochRegistry::new(opts.max_threads),
            data_len: opts.data_words,
            retire_threshold: opts.retire_threshold,
            assist_one_in,
            seed: opts.seed,
            arena_id: ARENA_IDS.fetch_add(1, SeqCst),
        }
    }

    pub fn data_len(&self) -> usize {
        self.data_len
    }

    pub fn max_width(&self) -> usize {
        self.pool.max_width
    }

    pub fn backend(&self) -> Arc<B> {
        Arc::clone(&self.mem)
    }

    pub fn instrument(&self) -> Arc<dyn Instrument> {
        Arc::clone(&self.inst)
    }

    /// Set initial word values before any concurrency (plain stores; on the
    /// durable backend the values are persisted immediately so they form the
    /// baseline image).
    pub fn init_words(&self, start: usize, values: &[u64]) -> Result<(), McasError> {
        if start + values.len() > self.data_len {
            return Err(McasError::InvalidAddress(start + values.len() - 1));
        }
        for (i, &v) in values.iter().enumerate() {
            encode_value(v)?;
            self.mem.store(start + i, v);
            let mut pending = Vec::new();
            self.mem.flush(&mut pending, start + i);
            self.mem.fence(&mut pending);
        }
        Ok(())
    }

    /// Register the calling thread. Fails once `max_threads` slots are taken.
    pub fn register_thread(&self) -> Result<ThreadHandle, McasError> {
        let slot = self.epochs.register()?;
        let mut last_seen = Vec::new();
        self.epochs.snapshot_into(&mut last_seen);
        let assist_last_seen = last_seen.clone();
        let rng = (self.seed ^ (slot as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407)) | 1;
        Ok(ThreadHandle {
            slot,
            arena_id: self.arena_id,
            finalized: VecDeque::new(),
            detached: VecDeque::new(),
            free: Vec::new(),
            last_seen,
            assist_last_seen,
            snap_gen: 0,
            scans: 0,
            rng,
            pending: Vec::new(),
            depth: 0,
        })
    }

    fn check_handle(&self, h: &ThreadHandle) {
        assert_eq!(h.arena_id, self.arena_id, "thread handle belongs to a different arena");
    }

    // ---- instrumented primitives -------------------------------------------------

    #[inline]
    pub(crate) fn ld(&self, slot: usize, addr: usize) -> u64 {
        self.inst.schedule_point(slot, AccessKind::Load, addr);
        self.mem.load(addr)
    }

    #[inline]
    pub(crate) fn st(&self, slot: usize, addr: usize, val: u64) {
        self.inst.schedule_point(slot, AccessKind::Store, addr);
        self.mem.store(addr, val);
    }

    #[inline]
    pub(crate) fn cas(
        &self,
        slot: usize,
        role: CasRole,
        addr: usize,
        expect: u64,
        new: u64,
    ) -> Result<u64, u64> {
        self.inst.schedule_point(slot, AccessKind::Cas, addr);
        let r = self.mem.cas(addr, expect, new);
        self.inst.cas_done(slot, role, addr, r.is_ok());
        r
    }

    #[inline]
    pub(crate) fn flush(&self, h: &mut ThreadHandle, addr: usize) {
        self.inst.schedule_point(h.slot, AccessKind::Flush, addr);
        self.mem.flush(&mut h.pending, addr);
        self.inst.flushed(h.slot, addr);
    }

    #[inline]
    pub(crate) fn fence(&self, h: &mut ThreadHandle, role: FenceRole) {
        self.inst.schedule_point(h.slot, AccessKind::Fence, usize::MAX);
        self.mem.fence(&mut h.pending);
        self.inst.fenced(h.slot, role);
    }

    // ---- epoch API ---------------------------------------------------------------

    /// Manually enter an epoch-protected section. `read`/`mcas` bracket
    /// themselves and must not be called inside a manual session.
    pub fn epoch_enter(&self, h: &mut ThreadHandle) -> Result<(), McasError> {
        self.check_handle(h);
        self.epochs.enter(h.slot)
    }

    pub fn epoch_exit(&self, h: &mut ThreadHandle) -> Result<(), McasError> {
        self.check_handle(h);
        self.epochs.exit(h.slot)
    }

    // ---- descriptor construction ---------------------------------------------------

    /// Build a descriptor targeting `entries` (address, expected, new).
    /// Entries are sorted by address here; duplicates are rejected. On the
    /// durable backend the record contents are persisted (flush + one setup
    /// fence) before the descriptor can be submitted.
    pub fn make_descriptor(
        &self,
        h: &mut ThreadHandle,
        entries: &[(usize, u64, u64)],
    ) -> Result<Descriptor, McasError> {
        self.check_handle(h);
        if entries.is_empty() {
            return Err(McasError::EmptyDescriptor);
        }
        if entries.len() > self.pool.max_width {
            return Err(McasError::TooWide { requested: entries.len(), max: self.pool.max_width });
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
        let slot_idx = match self.pool.alloc(&mut h.free) {
            Some(s) => s,
            None => self.alloc_stalled(h)?,
        };
        let base = self.pool.slot_base(slot_idx);
        let slot = h.slot;
        self.st(slot, base, STATUS_ACTIVE);
        self.st(slot, base + 1, sorted.len() as u64);
        for (i, &(addr, old, new)) in sorted.iter().enumerate() {
            let e = Pool::entry_addr(base, i);
            self.st(slot, e, addr as u64);
            self.st(slot, e + 1, old);
            self.st(slot, e + 2, new);
            self.st(slot, e + 3, base as u64);
        }
        if B::DURABLE {
            for w in 0..record_words(sorted.len()) {
                self.flush(h, base + w);
            }
            self.fence(h, FenceRole::Setup);
        }
        Ok(Descriptor { base, id: self.pool.id_of_base(base) })
    }

    /// The pool came up dry: reclamation is stalled, almost always behind a
    /// peer that was descheduled inside its epoch. Scan-retry until that
    /// peer runs again and the backlogs recycle. We are outside any epoch
    /// here, so waiting never blocks a peer's scan. See [`PRESSURE_ROUNDS`]
    /// for why the bound is generous.
    #[cold]
    fn alloc_stalled(&self, h: &mut ThreadHandle) -> Result<usize, McasError> {
        for _ in 0..PRESSURE_ROUNDS {
            self.scan_internal(h);
            if let Some(s) = self.pool.alloc(&mut h.free) {
                return Ok(s);
            }
            for _ in 0..PRESSURE_SPINS {
                core::hint::spin_loop();
            }
        }
        Err(McasError::PoolExhausted)
    }

    // ---- the engine ----------------------------------------------------------------

    /// Atomically replace every target word's expected value with its new
    /// value, or none. Returns whether the operation succeeded. Lock-free;
    /// helps any operation it conflicts with.
    pub fn mcas(&self, h: &mut ThreadHandle, desc: Descriptor) -> bool {
        self.check_handle(h);
        assert!(
            !self.epochs.is_inside(h.slot),
            "mcas called inside a manual epoch session"
        );
        self.epochs.enter(h.slot).expect("epoch parity");
        let ok = self.mcas_inner(h, desc.base);
        self.epochs.exit(h.slot).expect("epoch parity");
        self.maybe_scan(h);
        ok
    }

    /// Read one word, resolving any descriptor it holds to the value the
    /// descriptor's outcome implies (helping it finish if still active).
    pub fn read(&self, h: &mut ThreadHandle, addr: usize) -> u64 {
        self.check_handle(h);
        assert!(addr < self.data_len, "read outside data region");
        assert!(
            !self.epochs.is_inside(h.slot),
            "read called inside a manual epoch session"
        );
        self.epochs.enter(h.slot).expect("epoch parity");
        let (content, value) = self.read_internal(h, addr, None);
        if is_handle(content) {
            self.maybe_assist(h, addr);
        }
        self.epochs.exit(h.slot).expect("epoch parity");
        self.maybe_scan(h);
        value
    }

    /// Resolve `addr` to `(content, value)`: the raw word and the application
    /// value it denotes. `self_base` is the descriptor on whose behalf we
    /// read (its own handles resolve without helping).
    pub(crate) fn read_internal(
        &self,
        h: &mut ThreadHandle,
        addr: usize,
        self_base: Option<usize>,
    ) -> (u64, u64) {
        let slot = h.slot;
        loop {
            let raw = self.ld(slot, addr);
            if !is_handle(raw) {
                return (raw, raw);
            }
            let entry = decode_handle(raw);
            let parent = self.ld(slot, entry + 3) as usize;
            let status = self.ld(slot, parent);
            if self_base != Some(parent) && !is_finalized(status) {
                // ongoing operation: help it to completion, then retry. The
                // helper's boolean is discarded; the outcome lives in the
                // parent's status word.
                h.depth += 1;
                let depth = h.depth;
                debug_assert!(depth <= self.epochs.max_threads());
                self.inst.helped(slot, depth);
                self.mcas_inner(h, parent);
                h.depth -= 1;
                continue;
            }
            if B::DURABLE && status & STATUS_DIRTY != 0 {
                // finalized but possibly not yet persistent: make it so
                // before acting on it, then clear the bit (plain store; the
                // benign same-value race with other helpers is intended).
                self.flush(h, parent);
                self.fence(h, FenceRole::Op);
                self.st(slot, parent, status_code(status));
                continue;
            }
            let outcome = self.ld(slot, parent);
            let value = if status_code(outcome) == STATUS_SUCCESSFUL {
                self.ld(slot, entry + 2)
            } else {
                self.ld(slot, entry + 1)
            };
            return (raw, value);
        }
    }

    /// Listing body shared by the public entry and helping re-entry. Helping
    /// re-enters here directly so the helper's epoch stays pinned (the
    /// public entries own the epoch bracket).
    pub(crate) fn mcas_inner(&self, h: &mut ThreadHandle, desc_base: usize) -> bool {
        let slot = h.slot;
        let width = self.ld(slot, desc_base + 1) as usize;
        let mut success = true;
        'words: for i in 0..width {
            let entry = Pool::entry_addr(desc_base, i);
            let addr = self.ld(slot, entry) as usize;
            let old = self.ld(slot, entry + 1);
            let my_handle = encode_handle(entry);
            loop {
                let (content, value) = self.read_internal(h, addr, Some(desc_base));
                if content == my_handle {
                    continue 'words; // already acquired (possibly by a helper)
                }
                if value != old {
                    success = false;
                    break 'words;
                }
                if is_finalized(self.ld(slot, desc_base)) {
                    break 'words; // someone helped us to completion
                }
                match self.cas(slot, CasRole::Acquire, addr, content, my_handle) {
                    Ok(_) => {
                        self.inst.acquired(slot, addr, self.pool.id_of_base(desc_base));
                        continue 'words;
                    }
                    Err(_) => continue, // word changed under us: re-read it
                }
            }
        }
        if B::DURABLE {
            // persist the acquisitions before the outcome can become visible
            for i in 0..width {
                let entry = Pool::entry_addr(desc_base, i);
                let addr = self.ld(slot, entry) as usize;
                self.flush(h, addr);
            }
            self.fence(h, FenceRole::Op); // fence 1 of 2
        }
        let outcome = if success { STATUS_SUCCESSFUL } else { STATUS_FAILED };
        let installed = if B::DURABLE { outcome | STATUS_DIRTY } else { outcome };
        if self
            .cas(slot, CasRole::Finalize, desc_base, STATUS_ACTIVE, installed)
            .is_ok()
        {
            self.inst.finalized(slot, self.pool.id_of_base(desc_base), success);
            // the finalizer (and only the finalizer) retires the descriptor
            self.retire_internal(h, self.pool.slot_of_base(desc_base));
        }
        if B::DURABLE {
            // persist whichever outcome won before anyone returns it
            self.flush(h, desc_base);
            self.fence(h, FenceRole::Op); // fence 2 of 2
            let st = self.ld(slot, desc_base);
            if st & STATUS_DIRTY != 0 {
                self.st(slot, desc_base, status_code(st));
            }
        }
        status_code(self.ld(slot, desc_base)) == STATUS_SUCCESSFUL
    }

    // ---- reader-assisted detach ------------------------------------------------------

    /// With probability 1/`assist_one_in`, run an epoch scan and — if every
    /// peer progressed since this thread's previous assist snapshot — CAS the
    /// single finalized handle at `addr` back to its final value. Returns
    /// whether the attempt was made (the CAS itself may still lose a race).
    pub fn reader_assisted_detach(&self, h: &mut ThreadHandle, addr: usize) -> bool {
        self.check_handle(h);
        assert!(addr < self.data_len);
        let outside = !self.epochs.is_inside(h.slot);
        if outside {
            self.epochs.enter(h.slot).expect("epoch parity");
        }
        let attempted = self.maybe_assist(h, addr);
        if outside {
            self.epochs.exit(h.slot).expect("epoch parity");
        }
        attempted
    }

    fn maybe_assist(&self, h: &mut ThreadHandle, addr: usize) -> bool {
        if self.assist_one_in == 0 {
            return false;
        }
        if xorshift64(&mut h.rng) % u64::from(self.assist_one_in) != 0 {
            return false;
        }
        let slot = h.slot;
        // flag the scan so peers detach but do not recycle while we look
        self.epochs.set_assist(slot, true);
        let quiescent = self
            .epochs
            .snapshot_progress(slot, &mut h.assist_last_seen)
            .progressed;
        if quiescent {
            let raw = self.ld(slot, addr);
            if is_handle(raw) {
                let entry = decode_handle(raw);
                let parent = self.ld(slot, entry + 3) as usize;
                let status = self.ld(slot, parent);
                if is_finalized(status) {
                    let value = if status_code(status) == STATUS_SUCCESSFUL {
                        self.ld(slot, entry + 2)
                    } else {
                        self.ld(slot, entry + 1)
                    };
                    // a lost race just means someone re-acquired or detached first
                    let _ = self.cas(slot, CasRole::Detach, addr, raw, value);
                }
            }
        }
        self.epochs.set_assist(slot, false);
        true
    }

    // ---- deferred reclamation ----------------------------------------------------------
    //
    // Finalized records sit on the owning thread's `finalized` list until a
    // quiescence scan proves every peer left the epoch it was retired in;
    // only then are their handles detached (CAS back to the final value) and,
    // one further scan later, the record slot recycled. The two-list shape
    // means a record is never recycled while any data word can still reach it.

    pub(crate) fn retire_internal(&self, h: &mut ThreadHandle, slot_idx: usize) {
        // finalize → retired transition is the finalizer's alone; a failure
        // here means the state machine is broken, not a benign race.
        self.pool
            .transition(slot_idx, SLOT_LIVE, SLOT_RETIRED)
            .expect("retire of non-live record");
        self.inst.retired(h.slot, self.pool.id_of(slot_idx));
        h.push_finalized(slot_idx);
        // no scan here: retirement often happens deep inside a helping chain
        // with our own epoch pinned, where back-to-back snapshots see every
        // mid-op peer as unprogressed and the scan is wasted. the public
        // entry points scan at op boundaries instead.
    }

    /// Threshold-triggered scan, run at public op boundaries (outside any
    /// epoch) where peers have had a whole operation to move.
    fn maybe_scan(&self, h: &mut ThreadHandle) {
        if h.finalized.len() + h.detached.len() >= self.retire_threshold {
            self.scan_internal(h);
        }
    }

    /// Hand a finalized record to the reclamation lists. Only needed by
    /// callers that drive retirement manually (tests); `mcas` retires its
    /// own descriptor automatically.
    pub fn retire_for_cleanup(&self, h: &mut ThreadHandle, id: DescId) -> Result<(), McasError> {
        self.check_handle(h);
        let slot_idx = self.pool.slot_of_base(id.base);
        if self.pool.incarnation_of(slot_idx) != id.incarnation {
            return Err(McasError::RetireViolation);
        }
        if !is_finalized(self.mem.load(id.base)) {
            return Err(McasError::DetachActive);
        }
        self.pool
            .transition(slot_idx, SLOT_LIVE, SLOT_RETIRED)
            .map_err(|_| McasError::RetireViolation)?;
        self.inst.retired(h.slot, self.pool.id_of(slot_idx));
        h.push_finalized(slot_idx);
        Ok(())
    }

    /// Run one quiescence scan: reclaim what the previous scan detached (if
    /// no peer currently asks otherwise), then detach what has become safe.
    /// Never blocks; returns whether every peer had progressed.
    pub fn quiescence_scan(&self, h: &mut ThreadHandle) -> bool {
        self.check_handle(h);
        self.scan_internal(h)
    }

    fn scan_internal(&self, h: &mut ThreadHandle) -> bool {
        let slot = h.slot;
        let outcome = {
            let (last_seen, snap_gen, scans) = h.scan_state();
            let outcome = self.epochs.snapshot_progress(slot, last_seen);
            *snap_gen += 1;
            *scans += 1;
            outcome
        };
        self.inst.scan(slot, outcome.progressed, outcome.blocker);
        if !outcome.progressed {
            return false;
        }
        let any_assist = outcome.any_assist;
        let cutoff = h.snap_gen.saturating_sub(2);
        // reclaim first: records whose detach happened before the *previous*
        // snapshot are unreachable now that this snapshot proved progress.
        // an assisting peer may be resolving handles without the epoch
        // discipline, so recycling (not detaching) pauses while any assist
        // flag is up.
        if !any_assist {
            self.reclaim_ready(h, cutoff);
        }
        self.detach_ready(h, cutoff);
        if !h.pending.is_empty() {
            self.fence(h, FenceRole::Reclaim);
        }
        true
    }

    fn reclaim_ready(&self, h: &mut ThreadHandle, cutoff: u64) {
        let mut ready: Vec<usize> = Vec::new();
        while let Some(&(stamp, slot_idx)) = h.detached.front() {
            if stamp > cutoff {
                break;
            }
            h.detached.pop_front();
            ready.push(slot_idx);
        }
        if ready.is_empty() {
            return;
        }
        if B::DURABLE {
            // a peer that was parked mid-operation may still hold an
            // unfenced flush of a target word captured while our handle was
            // installed; it cannot commit after this point (the scan that
            // freed these records proved the peer fenced since), but a flush
            // *we* captured during detach could still be pending, and the
            // recycled record must never be reachable from the persistent
            // image. re-flush every target word of every record we are about
            // to recycle, then fence once.
            for &slot_idx in &ready {
                let base = self.pool.slot_base(slot_idx);
                // scrub the status word too: the flush that persisted the
                // outcome captured it with the dirty bit still set, and the
                // post-fence clean store was never re-flushed. recycling is
                // the natural point to persist the clean value, so settled
                // images recover with nothing to do.
                self.flush(h, base);
                let width = self.mem.load(base + 1) as usize;
                for i in 0..width {
                    let addr = self.mem.load(Pool::entry_addr(base, i)) as usize;
                    self.flush(h, addr);
                }
            }
            self.fence(h, FenceRole::Reclaim);
        }
        for slot_idx in ready {
            self.pool
                .transition(slot_idx, SLOT_DETACHED, SLOT_FREE)
                .expect("reclaim of non-detached record");
            self.inst.reclaimed(h.slot, self.pool.id_of(slot_idx));
            // helping hands records to their finalizer, so slots drift away
            // from the threads that allocated them; a small per-thread cache
            // with shared overflow keeps every thread allocatable.
            if h.free.len() < FREE_CACHE {
                h.free.push(slot_idx);
            } else {
                self.pool.push_free_shared(slot_idx);
            }
        }
    }

    fn detach_ready(&self, h: &mut ThreadHandle, cutoff: u64) {
        let slot = h.slot;
        loop {
            let slot_idx = match h.finalized.front() {
                Some(&(stamp, slot_idx)) if stamp <= cutoff => slot_idx,
                _ => break,
            };
            h.finalized.pop_front();
            let cas_count = self.detach_record(h, slot_idx);
            self.inst.detached(slot, self.pool.id_of(slot_idx), cas_count);
            self.pool
                .transition(slot_idx, SLOT_RETIRED, SLOT_DETACHED)
                .expect("detach of non-retired record");
            let stamp_now = h.snap_gen;
            h.detached.push_back((stamp_now, slot_idx));
        }
    }

    /// Unlink every target word that still holds this record's handle.
    /// Returns the number of detach CASes actually issued (words already
    /// overwritten by later operations cost nothing).
    fn detach_record(&self, h: &mut ThreadHandle, slot_idx: usize) -> usize {
        let slot = h.slot;
        let base = self.pool.slot_base(slot_idx);
        let status = self.ld(slot, base);
        debug_assert!(is_finalized(status), "detaching an unfinalized record");
        let succeeded = status_code(status) == STATUS_SUCCESSFUL;
        let width = self.ld(slot, base + 1) as usize;
        let mut cas_count = 0;
        for i in 0..width {
            let entry = Pool::entry_addr(base, i);
            let addr = self.ld(slot, entry) as usize;
            let my_handle = encode_handle(entry);
            // pre-check: only pay a CAS for words that still point at us
            if self.ld(slot, addr) != my_handle {
                continue;
            }
            let value = if succeeded {
                self.ld(slot, entry + 2)
            } else {
                self.ld(slot, entry + 1)
            };
            cas_count += 1;
            if self.cas(slot, CasRole::Detach, addr, my_handle, value).is_ok() && B::DURABLE {
                self.flush(h, addr);
            }
        }
        cas_count
    }

    /// Explicitly detach one record (test hook; the scan does this in bulk).
    /// The record must be retired and owned by `h`'s lists.
    pub fn detach(&self, h: &mut ThreadHandle, id: DescId) -> Result<usize, McasError> {
        self.check_handle(h);
        let slot_idx = self.pool.slot_of_base(id.base);
        if self.pool.incarnation_of(slot_idx) != id.incarnation {
            return Err(McasError::RetireViolation);
        }
        if !is_finalized(self.mem.load(id.base)) {
            return Err(McasError::DetachActive);
        }
        self.pool
            .transition(slot_idx, SLOT_RETIRED, SLOT_DETACHED)
            .map_err(|_| McasError::RetireViolation)?;
        let n = self.detach_record(h, slot_idx);
        self.inst.detached(h.slot, self.pool.id_of(slot_idx), n);
        let pos = h.finalized.iter().position(|&(_, s)| s == slot_idx);
        if let Some(p) = pos {
            h.finalized.remove(p);
        }
        let stamp = h.snap_gen;
        h.detached.push_back((stamp, slot_idx));
        if B::DURABLE && !h.pending.is_empty() {
            self.fence(h, FenceRole::Reclaim);
        }
        Ok(n)
    }

    // ---- audits (test support) -------------------------------------------------------

    /// Quiescent-state audit: every handle installed in a data word must
    /// reference a record that is still live or retired (never detached or
    /// recycled). Returns the first offending (address, record state).
    pub fn audit_handles(&self) -> Result<(), (usize, u8)> {
        for addr in 0..self.data_len {
            let raw = self.mem.load(addr);
            if is_handle(raw) {
                let entry = decode_handle(raw);
                let parent = self.mem.load(entry + 3) as usize;
                let state = self.pool.state(self.pool.slot_of_base(parent));
                if state != SLOT_LIVE && state != SLOT_RETIRED {
                    return Err((addr, state));
                }
            }
        }
        Ok(())
    }

    /// Raw word values of the data region (no descriptor resolution).
    pub fn raw_words(&self) -> Vec<u64> {
        (0..self.data_len).map(|a| self.mem.load(a)).collect()
    }

    /// Distinct record slots ever bump-allocated. Recycling keeps this far
    /// below the operation count on long runs.
    pub fn pool_slots_touched(&self) -> usize {
        self.pool.allocated()
    }

    /// Pool slot counts by life-cycle state: [free, live, retired, detached].
    pub fn pool_state_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for s in 0..self.pool.slots {
            counts[self.pool.state(s) as usize] += 1;
        }
        counts
    }
}
