//! Descriptor records.
//!
//! Descriptors live in a word-granular pool region appended after the data
//! words, so that on the persistent backend they are part of the same crash
//! image as the data and can be enumerated by recovery. Every record occupies
//! a uniform slab of `2 + 4 * max_width` words:
//!
//! ```text
//! +0  status            ACTIVE | SUCCESSFUL | FAILED, plus the dirty bit
//! +1  width             number of entries in use
//! +2 + 4i .. +5 + 4i    entry i: [address, old, new, parent]
//! ```
//!
//! `parent` is the record's own base address, stored per entry so that a
//! handle (which encodes an *entry* address) can find its descriptor in one
//! load. Entries are immutable from publication until the record is reclaimed
//! and recycled; only the status word changes.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, AtomicU8, AtomicUsize, Ordering::SeqCst};

/// Status codes (low two bits of the status word).
pub type StatusCode = u64;
pub const STATUS_ACTIVE: StatusCode = 0;
pub const STATUS_SUCCESSFUL: StatusCode = 1;
pub const STATUS_FAILED: StatusCode = 2;

pub const STATUS_CODE_MASK: u64 = 0b11;
/// Set together with the finalizing CAS on the durable backend; cleared by a
/// plain store once the status word is known persistent.
pub const STATUS_DIRTY: u64 = 0b100;

/// Status comparisons mask the dirty bit on both backends, uniformly.
#[inline]
pub fn status_code(status: u64) -> StatusCode {
    status & STATUS_CODE_MASK
}

#[inline]
pub fn is_finalized(status: u64) -> bool {
    status_code(status) != STATUS_ACTIVE
}

/// Volatile life-cycle state of a record slot (side table, not part of any
/// crash image; used by reclamation and the audit hooks).
pub(crate) const SLOT_FREE: u8 = 0;
pub(crate) const SLOT_LIVE: u8 = 1;
pub(crate) const SLOT_RETIRED: u8 = 2;
pub(crate) const SLOT_DETACHED: u8 = 3;

/// Identity of one descriptor *incarnation*: the record's base address plus
/// a counter bumped every time the slot is recycled, so instrumentation can
/// tell apart reuses of the same slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DescId {
    pub base: usize,
    pub incarnation: u64,
}

/// Pool geometry and volatile side tables. Record *contents* are read and
/// written through the arena's instrumented backend accessors, never here.
pub(crate) struct Pool {
    pub base: usize,
    pub slot_words: usize,
    pub slots: usize,
    pub max_width: usize,
    bump: AtomicUsize,
    state: Box<[AtomicU8]>,
    incarnation: Box<[AtomicU64]>,
    /// Shared free stack. Helping migrates records to their finalizer, so a
    /// thread whose ops keep getting finalized by peers would bump-allocate
    /// forever if recycled slots only ever returned to per-thread free
    /// lists; the overflow ends up here instead. Versioned head (upper 32
    /// bits count pushes/pops) to rule out ABA on the index CAS.
    free_head: AtomicU64,
    free_next: Box<[AtomicU64]>,
}

const FREE_IDX_MASK: u64 = 0xffff_ffff;

/// Per-thread free-list cap; recycled slots beyond it go to the shared
/// stack so no thread can hoard circulation capacity.
pub(crate) const FREE_CACHE: usize = 8;

/// A dry pool almost never means the pool is too small. It means
/// reclamation stalled: some peer was descheduled inside its epoch and
/// every retired record piled up behind it. That peer will run again, so
/// allocation scan-retries for a long while (each round is well under a
/// microsecond) before reporting exhaustion; the bound exists only so a
/// genuinely undersized pool — or a thread that died mid-operation —
/// produces an error instead of a hang.
pub(crate) const PRESSURE_ROUNDS: usize = 1 << 20;
/// Spin-hint iterations between pressure rounds.
pub(crate) const PRESSURE_SPINS: usize = 512;

impl Pool {
    pub fn new(base: usize, max_width: usize, slots: usize) -> Pool {
        Pool::with_layout(base, record_words(max_width), max_width, slots)
    }

    /// A pool with caller-chosen slab size (record layouts other than the
    /// default `2 + 4w` one).
    pub fn with_layout(base: usize, slot_words: usize, max_width: usize, slots: usize) -> Pool {
        let mut state = Vec::with_capacity(slots);
        state.resize_with(slots, || AtomicU8::new(SLOT_FREE));
        let mut incarnation = Vec::with_capacity(slots);
        incarnation.resize_with(slots, || AtomicU64::new(0));
        let mut free_next = Vec::with_capacity(slots);
        free_next.resize_with(slots, || AtomicU64::new(0));
        assert!(slots as u64 <= FREE_IDX_MASK, "pool too large for shared free stack");
        Pool {
            base,
            slot_words,
            slots,
            max_width,
            bump: AtomicUsize::new(0),
            state: state.into_boxed_slice(),
            incarnation: incarnation.into_boxed_slice(),
            free_head: AtomicU64::new(0),
            free_next: free_next.into_boxed_slice(),
        }
    }

    #[inline]
    pub fn total_words(&self) -> usize {
        self.slots * self.slot_words
    }

    #[inline]
    pub fn slot_base(&self, slot: usize) -> usize {
        self.base + slot * self.slot_words
    }

    #[inline]
    pub fn slot_of_base(&self, base: usize) -> usize {
        debug_assert!(base >= self.base && (base - self.base) % self.slot_words == 0);
        (base - self.base) / self.slot_words
    }

    #[inline]
    pub fn entry_addr(base: usize, i: usize) -> usize {
        entry_address(base, i)
    }

    /// Pop a recycled slot, bump-allocate a fresh one, or steal from the
    /// shared free stack — in that order.
    pub fn alloc(&self, free: &mut Vec<usize>) -> Option<usize> {
        let slot = free
            .pop()
            .or_else(|| {
                let slot = self.bump.fetch_add(1, SeqCst);
                (slot < self.slots).then_some(slot)
            })
            .or_else(|| self.pop_free_shared())?;
        let prev = self.state[slot].swap(SLOT_LIVE, SeqCst);
        debug_assert_eq!(prev, SLOT_FREE);
        self.incarnation[slot].fetch_add(1, SeqCst);
        Some(slot)
    }

    /// Move one free slot into `free` without allocating it (it stays in
    /// the free state until `alloc` actually grabs it). Lets a caller top
    /// up its cache at a point where allocation is safe, then draw from the
    /// cache at a point where it is not.
    pub fn reserve(&self, free: &mut Vec<usize>) -> bool {
        let slot = {
            let slot = self.bump.fetch_add(1, SeqCst);
            (slot < self.slots).then_some(slot)
        }
        .or_else(|| self.pop_free_shared());
        match slot {
            Some(s) => {
                free.push(s);
                true
            }
            None => false,
        }
    }

    /// Donate a free slot to the shared stack.
    pub fn push_free_shared(&self, slot: usize) {
        debug_assert_eq!(self.state(slot), SLOT_FREE);
        loop {
            let head = self.free_head.load(SeqCst);
            self.free_next[slot].store(head & FREE_IDX_MASK, SeqCst);
            let new = (head >> 32).wrapping_add(1) << 32 | (slot as u64 + 1);
            if self.free_head.compare_exchange(head, new, SeqCst, SeqCst).is_ok() {
                return;
            }
        }
    }

    fn pop_free_shared(&self) -> Option<usize> {
        loop {
            let head = self.free_head.load(SeqCst);
            let idx1 = head & FREE_IDX_MASK;
            if idx1 == 0 {
                return None;
            }
            let slot = (idx1 - 1) as usize;
            let next = self.free_next[slot].load(SeqCst);
            let new = (head >> 32).wrapping_add(1) << 32 | next;
            if self.free_head.compare_exchange(head, new, SeqCst, SeqCst).is_ok() {
                return Some(slot);
            }
        }
    }

    #[inline]
    pub fn state(&self, slot: usize) -> u8 {
        self.state[slot].load(SeqCst)
    }

    /// Single transition in the slot life cycle; `Ok` only if `from` held.
    pub fn transition(&self, slot: usize, from: u8, to: u8) -> Result<(), u8> {
        self.state[slot]
            .compare_exchange(from, to, SeqCst, SeqCst)
            .map(|_| ())
            .map_err(|actual| actual)
    }

    #[inline]
    pub fn incarnation_of(&self, slot: usize) -> u64 {
        self.incarnation[slot].load(SeqCst)
    }

    pub fn id_of_base(&self, base: usize) -> DescId {
        DescId { base, incarnation: self.incarnation_of(self.slot_of_base(base)) }
    }

    pub fn id_of(&self, slot: usize) -> DescId {
        DescId { base: self.slot_base(slot), incarnation: self.incarnation_of(slot) }
    }

    /// Slots ever allocated (recycled slots stay counted once).
    pub fn allocated(&self) -> usize {
        self.bump.load(SeqCst).min(self.slots)
    }
}

/// Words per record slab for a given maximum descriptor width.
pub fn record_words(max_width: usize) -> usize {
    2 + 4 * max_width
}

/// Address of entry `i` of the record at `base` (see the module docs for the
/// layout). Public so external tooling can parse the pool region of a crash
/// image without an arena.
#[inline]
pub fn entry_address(base: usize, i: usize) -> usize {
    base + 2 + 4 * i
}
