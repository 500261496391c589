//! Per-thread epoch counters.
//!
//! Each registered thread owns one counter: even means outside any protected
//! section, odd means inside a `read`/`mcas` call. Scans never wait — a peer
//! has *progressed* relative to a cached snapshot if its epoch is even or
//! differs from the cached value, which is enough to know it cannot still
//! hold references taken before the snapshot.
//!
//! A per-slot `assist` flag marks a thread that is inside a reader-assist
//! epoch scan; while any peer has it set, scans may detach descriptors but
//! must not recycle them.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};

use crate::error::McasError;

struct Slot {
    epoch: AtomicU64,
    assist: AtomicBool,
    parked: AtomicBool,
}

/// Result of one progress scan over all peers.
pub(crate) struct SnapshotOutcome {
    /// Every peer is out of the epoch it was in at the previous snapshot.
    pub progressed: bool,
    /// Like `progressed`, but a peer parked at an in-epoch allocation wait
    /// does not block: parking declares that the thread holds no references
    /// to sub-operation records and cannot pick up one whose handle left
    /// the data words before it unparks. Drains that cover only such
    /// records may use this; without it, two threads parked inside their
    /// epochs would block each other's scans forever.
    pub progressed_relaxed: bool,
    /// Some peer is inside a reader-assist scan; recycling must be skipped.
    pub any_assist: bool,
    /// First peer that blocked strict progress, with the epoch it was stuck on.
    pub blocker: Option<(usize, u64)>,
}

pub(crate) struct EpochRegistry {
    slots: Box<[Slot]>,
    registered: AtomicUsize,
}

impl EpochRegistry {
    pub fn new(max_threads: usize) -> EpochRegistry {
        let mut slots = Vec::with_capacity(max_threads);
        slots.resize_with(max_threads, || Slot {
            epoch: AtomicU64::new(0),
            assist: AtomicBool::new(false),
            parked: AtomicBool::new(false),
        });
        EpochRegistry { slots: slots.into_boxed_slice(), registered: AtomicUsize::new(0) }
    }

    pub fn register(&self) -> Result<usize, McasError> {
        let slot = self.registered.fetch_add(1, SeqCst);
        if slot >= self.slots.len() {
            return Err(McasError::ThreadCapacity);
        }
        Ok(slot)
    }

    #[inline]
    pub fn max_threads(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub fn registered(&self) -> usize {
        self.registered.load(SeqCst).min(self.slots.len())
    }

    #[inline]
    pub fn epoch(&self, slot: usize) -> u64 {
        self.slots[slot].epoch.load(SeqCst)
    }

    #[inline]
    pub fn is_inside(&self, slot: usize) -> bool {
        self.epoch(slot) % 2 == 1
    }

    /// Enter a protected section (must currently be outside).
    pub fn enter(&self, slot: usize) -> Result<(), McasError> {
        let prev = self.slots[slot].epoch.fetch_add(1, SeqCst);
        if prev % 2 != 0 {
            self.slots[slot].epoch.fetch_sub(1, SeqCst);
            return Err(McasError::EpochParity);
        }
        Ok(())
    }

    /// Leave a protected section (must currently be inside).
    pub fn exit(&self, slot: usize) -> Result<(), McasError> {
        let prev = self.slots[slot].epoch.fetch_add(1, SeqCst);
        if prev % 2 != 1 {
            self.slots[slot].epoch.fetch_sub(1, SeqCst);
            return Err(McasError::EpochParity);
        }
        Ok(())
    }

    pub fn set_assist(&self, slot: usize, on: bool) {
        self.slots[slot].assist.store(on, SeqCst);
    }

    /// Mark this thread as parked at an in-epoch allocation wait. The order
    /// matters on the way out: unpark only right before leaving the wait
    /// loop, while still holding no sub-operation references.
    pub fn set_parked(&self, slot: usize, on: bool) {
        self.slots[slot].parked.store(on, SeqCst);
    }

    /// Snapshot all peer epochs into `last_seen` and report whether every
    /// peer progressed since the previous snapshot (epoch even or changed),
    /// plus whether any peer is currently inside an assist scan. The caller's
    /// own slot is skipped — it is by construction inside an operation when
    /// it scans.
    pub fn snapshot_progress(&self, my_slot: usize, last_seen: &mut [u64]) -> SnapshotOutcome {
        let mut blocker = None;
        let mut relaxed_blocked = false;
        let mut any_assist = false;
        for i in 0..self.registered() {
            if i == my_slot {
                continue;
            }
            let e = self.slots[i].epoch.load(SeqCst);
            if e % 2 == 1 && e == last_seen[i] {
                if blocker.is_none() {
                    blocker = Some((i, e));
                }
                // a stale `parked` read is harmless: a peer that just
                // unparked re-derives every reference it uses afterwards,
                // and drainable records left the data words long before.
                if !self.slots[i].parked.load(SeqCst) {
                    relaxed_blocked = true;
                }
            }
            last_seen[i] = e;
            if self.slots[i].assist.load(SeqCst) {
                any_assist = true;
            }
        }
        SnapshotOutcome {
            progressed: blocker.is_none(),
            progressed_relaxed: !relaxed_blocked,
            any_assist,
            blocker,
        }
    }

    /// Registration-time snapshot for a fresh thread's caches.
    pub fn snapshot_into(&self, last_seen: &mut Vec<u64>) {
        last_seen.clear();
        last_seen.extend(self.slots.iter().map(|s| s.epoch.load(SeqCst)));
    }
}

/// Tiny deterministic PRNG for the reader-assist draw (xorshift64*).
#[inline]
pub(crate) fn xorshift64(state: &mut u64) -> u64 {
    let mut x = *state;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    *state = x;
    x.wrapping_mul(0x2545F4914F6CDD1D)
}
