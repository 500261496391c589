//! Memory backends.
//!
//! The engine is generic over a word-granular [`MemBackend`]. [`VolatileMem`]
//! is a flat array of atomics; [`SimPmem`] additionally keeps a persistent
//! shadow word per volatile word and models the persistence instructions:
//!
//! * `flush` records `(addr, value-at-issue-time)` into the calling thread's
//!   pending set (capture at issue, deliberately stricter than hardware
//!   writeback-at-completion);
//! * `fence` commits the caller's pending records to the persistent plane;
//!   pending flushes of different threads are unordered relative to each
//!   other;
//! * [`SimPmem::spontaneous_writeback`] persists the current volatile value
//!   of one word, modeling cache evictions — harness-only, never called by
//!   the algorithms;
//! * [`SimPmem::crash`] discards all volatile state (and, by construction,
//!   any un-fenced pending flushes die with the thread handles) and returns a
//!   [`CrashImage`] of the persistent plane.
//!
//! Plain CAS/store/load never implicitly persist anything: a CAS carries no
//! fence, which is more adversarial than x86.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering::SeqCst};

use crate::error::McasError;

/// Current crash-image serialization format version.
pub const IMAGE_FORMAT_VERSION: u32 = 1;

const IMAGE_MAGIC: &[u8; 8] = b"MCASIMG\0";

/// Word-granular shared memory with optional persistence semantics.
pub trait MemBackend: Send + Sync + 'static {
    /// Whether the durable (flush/fence/dirty-bit) protocol applies.
    const DURABLE: bool;

    fn with_words(words: usize) -> Self;
    fn len(&self) -> usize;
    fn load(&self, addr: usize) -> u64;
    fn store(&self, addr: usize, val: u64);
    /// Compare-and-swap; `Ok(prev)` on success, `Err(actual)` on failure.
    fn cas(&self, addr: usize, expect: u64, new: u64) -> Result<u64, u64>;
    /// Record a pending writeback of `addr` into `pending` (no-op if not durable).
    fn flush(&self, pending: &mut Vec<(usize, u64)>, addr: usize);
    /// Commit the caller's pending writebacks (no-op if not durable).
    fn fence(&self, pending: &mut Vec<(usize, u64)>);
}

fn zeroed_words(words: usize) -> Box<[AtomicU64]> {
    let mut v = Vec::with_capacity(words);
    v.resize_with(words, || AtomicU64::new(0));
    v.into_boxed_slice()
}

/// Plain volatile atomic words.
pub struct VolatileMem {
    words: Box<[AtomicU64]>,
}

impl MemBackend for VolatileMem {
    const DURABLE: bool = false;

    fn with_words(words: usize) -> Self {
        VolatileMem { words: zeroed_words(words) }
    }

    #[inline]
    fn len(&self) -> usize {
        self.words.len()
    }

    #[inline]
    fn load(&self, addr: usize) -> u64 {
        self.words[addr].load(SeqCst)
    }

    #[inline]
    fn store(&self, addr: usize, val: u64) {
        self.words[addr].store(val, SeqCst);
    }

    #[inline]
    fn cas(&self, addr: usize, expect: u64, new: u64) -> Result<u64, u64> {
        self.words[addr].compare_exchange(expect, new, SeqCst, SeqCst)
    }

    #[inline]
    fn flush(&self, _pending: &mut Vec<(usize, u64)>, _addr: usize) {}

    #[inline]
    fn fence(&self, _pending: &mut Vec<(usize, u64)>) {}
}

/// Simulated persistent memory: a volatile plane backed by a persistent one.
pub struct SimPmem {
    volatile: Box<[AtomicU64]>,
    persistent: Box<[AtomicU64]>,
}

impl MemBackend for SimPmem {
    const DURABLE: bool = true;

    fn with_words(words: usize) -> Self {
        SimPmem { volatile: zeroed_words(words), persistent: zeroed_words(words) }
    }

    #[inline]
    fn len(&self) -> usize {
        self.volatile.len()
    }

    #[inline]
    fn load(&self, addr: usize) -> u64 {
        self.volatile[addr].load(SeqCst)
    }

    #[inline]
    fn store(&self, addr: usize, val: u64) {
        self.volatile[addr].store(val, SeqCst);
    }

    #[inline]
    fn cas(&self, addr: usize, expect: u64, new: u64) -> Result<u64, u64> {
        self.volatile[addr].compare_exchange(expect, new, SeqCst, SeqCst)
    }

    #[inline]
    fn flush(&self, pending: &mut Vec<(usize, u64)>, addr: usize) {
        let captured = self.volatile[addr].load(SeqCst);
        pending.push((addr, captured));
    }

    #[inline]
    fn fence(&self, pending: &mut Vec<(usize, u64)>) {
        for (addr, val) in pending.drain(..) {
            self.persistent[addr].store(val, SeqCst);
        }
    }
}

impl SimPmem {
    /// Build a backend whose volatile and persistent planes both equal `image`.
    pub fn from_image(image: &CrashImage) -> SimPmem {
        let mem = SimPmem::with_words(image.words.len());
        for (i, &w) in image.words.iter().enumerate() {
            mem.volatile[i].store(w, SeqCst);
            mem.persistent[i].store(w, SeqCst);
        }
        mem
    }

    /// Persist the current volatile value of `addr`, as a cache eviction
    /// would. Retries until the volatile value is stable across the copy so
    /// that the writeback is atomic (a torn copy could persist a value older
    /// than one already persisted, which coherent hardware cannot do).
    pub fn spontaneous_writeback(&self, addr: usize) {
        loop {
            let v = self.volatile[addr].load(SeqCst);
            self.persistent[addr].store(v, SeqCst);
            if self.volatile[addr].load(SeqCst) == v {
                return;
            }
        }
    }

    /// Read one word of the persistent plane.
    pub fn persistent_value(&self, addr: usize) -> u64 {
        self.persistent[addr].load(SeqCst)
    }

    /// Snapshot the persistent plane. Meaningful as a crash only while no
    /// other thread is mutating it (the harness stops the world first).
    pub fn snapshot_persistent(&self) -> Vec<u64> {
        self.persistent.iter().map(|w| w.load(SeqCst)).collect()
    }
}

/// A point-in-time copy of the persistent plane (data words followed by the
/// descriptor-pool region) plus the geometry needed to interpret the pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashImage {
    /// Number of application data words at the front of `words`.
    pub data_len: usize,
    /// Words per descriptor record slot.
    pub slot_words: usize,
    /// Total record slots in the pool region.
    pub slots: usize,
    /// Maximum entries per descriptor the arena was built with.
    pub max_width: usize,
    /// Persistent values over the full range (`data_len + slots * slot_words`).
    pub words: Vec<u64>,
}

impl CrashImage {
    /// Serialize: magic, version, geometry, then little-endian words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 + 5 * 8 + self.words.len() * 8);
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&IMAGE_FORMAT_VERSION.to_le_bytes());
        for field in [
            self.data_len as u64,
            self.slot_words as u64,
            self.slots as u64,
            self.max_width as u64,
            self.words.len() as u64,
        ] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CrashImage, McasError> {
        let header = 8 + 4 + 5 * 8;
        if bytes.len() < header {
            return Err(McasError::BadImage("truncated header"));
        }
        if &bytes[..8] != IMAGE_MAGIC {
            return Err(McasError::BadImage("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != IMAGE_FORMAT_VERSION {
            return Err(McasError::BadImage("unsupported version"));
        }
        let mut fields = [0u64; 5];
        for (i, f) in fields.iter_mut().enumerate() {
            let at = 12 + i * 8;
            *f = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        }
        let [data_len, slot_words, slots, max_width, total] = fields.map(|f| f as usize);
        if total != data_len + slots * slot_words {
            return Err(McasError::BadImage("geometry mismatch"));
        }
        if bytes.len() != header + total * 8 {
            return Err(McasError::BadImage("truncated words"));
        }
        let words = bytes[header..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(CrashImage { data_len, slot_words, slots, max_width, words })
    }
}
