//! Crash recovery for the durable arena.
//!
//! A crash leaves the persistent plane as a [`CrashImage`]: data words plus
//! the descriptor-pool region. Recovery walks every record slot and settles
//! every word that still holds an installed handle:
//!
//! * status `SUCCESSFUL` (dirty or clean): the operation's outcome was
//!   durable, or at least never observable as anything else — roll the word
//!   forward to the entry's new value;
//! * status `ACTIVE` or `FAILED`: the operation never durably succeeded
//!   (the dirty-bit protocol keeps a non-persistent `SUCCESSFUL` from being
//!   acted on), so roll the word back to the entry's expected value.
//!
//! The per-word guard is exact — a word is rewritten only while it equals
//! the handle of that specific entry — which makes recovery idempotent:
//! running it again (or crashing partway through and re-running) finds fewer
//! installed handles and rewrites only those. Slots whose record is only
//! partially persistent are provably unreferenced (the setup fence persists
//! a record in full before its handles can be installed anywhere), so the
//! guard simply never fires for them.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::arena::{Arena, ArenaOptions, PmArena};
use crate::desc::{status_code, record_words, Pool, STATUS_DIRTY, STATUS_FAILED, STATUS_SUCCESSFUL};
use crate::error::McasError;
use crate::instrument::{AccessKind, FenceRole, Instrument};
use crate::mem::{CrashImage, MemBackend, SimPmem};
use crate::word::encode_handle;
use crate::NO_SLOT;

/// What recovery did, for reporting and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryStats {
    /// Records with a durably successful status whose words were completed.
    pub rolled_forward: usize,
    /// Records left active or failed whose words were restored.
    pub rolled_back: usize,
    /// Data words rewritten in total.
    pub words_rewritten: usize,
    /// Status words whose dirty bit was cleared.
    pub dirty_cleared: usize,
}

/// Rebuild a durable arena from a crash image: [`assemble`] then [`settle`].
/// `opts` supplies the runtime knobs (thread capacity, thresholds); the
/// geometry comes from the image and must be internally consistent or this
/// fails with `BadImage`.
pub fn recover(
    image: &CrashImage,
    opts: ArenaOptions,
    inst: Arc<dyn Instrument>,
) -> Result<(PmArena, RecoveryStats), McasError> {
    let arena = assemble(image, opts, inst)?;
    let stats = settle(&arena, image)?;
    Ok((arena, stats))
}

/// Stage one of recovery: validate the image geometry and load it into a
/// fresh backend (both planes equal). The arena must not be used before
/// [`settle`] has run over the same image; the stages are separate so a
/// harness can interpose on the repair pass — e.g. crash it partway through
/// and snapshot the half-settled persistent plane from the arena it still
/// holds.
pub fn assemble(
    image: &CrashImage,
    mut opts: ArenaOptions,
    inst: Arc<dyn Instrument>,
) -> Result<PmArena, McasError> {
    if image.data_len == 0 {
        return Err(McasError::BadImage("image has no data words"));
    }
    if image.slot_words != record_words(image.max_width) {
        return Err(McasError::BadImage("slot_words disagrees with max_width"));
    }
    if image.words.len() != image.data_len + image.slots * image.slot_words {
        return Err(McasError::BadImage("word count disagrees with geometry"));
    }
    opts.data_words = image.data_len;
    opts.max_width = image.max_width;
    let mem = SimPmem::from_image(image);
    Ok(Arena::from_backend(mem, &opts, image.slots, inst))
}

/// Convenience over [`recover`] for images freshly parsed from bytes.
pub fn recover_bytes(
    bytes: &[u8],
    opts: ArenaOptions,
    inst: Arc<dyn Instrument>,
) -> Result<(PmArena, RecoveryStats), McasError> {
    let image = CrashImage::from_bytes(bytes)?;
    recover(&image, opts, inst)
}

/// Stage two of recovery: the rewrite pass. Runs before any thread
/// registers, but still announces every access through the instrument so
/// crash-during-recovery tests can interpose; `NO_SLOT` marks the accesses
/// as recovery's. Safe to re-run (against a freshly captured image) any
/// number of times.
pub fn settle(arena: &PmArena, image: &CrashImage) -> Result<RecoveryStats, McasError> {
    let mem = arena.backend();
    let inst = arena.instrument();
    let mut pending: Vec<(usize, u64)> = Vec::new();
    let mut stats = RecoveryStats::default();
    let rewrite = |addr: usize, value: u64, pending: &mut Vec<(usize, u64)>| {
        inst.schedule_point(NO_SLOT, AccessKind::Store, addr);
        mem.store(addr, value);
        inst.schedule_point(NO_SLOT, AccessKind::Flush, addr);
        mem.flush(pending, addr);
        inst.flushed(NO_SLOT, addr);
    };
    for slot_idx in 0..image.slots {
        let base = arena.pool.slot_base(slot_idx);
        let status = image.words[base];
        let width = image.words[base + 1] as usize;
        if width == 0 {
            continue; // never-used or zeroed slot
        }
        if width > image.max_width {
            return Err(McasError::BadImage("record width exceeds maximum"));
        }
        if status & !STATUS_DIRTY > STATUS_FAILED {
            return Err(McasError::BadImage("record status is not a known code"));
        }
        let forward = status_code(status) == STATUS_SUCCESSFUL;
        let mut rewrote = 0usize;
        for i in 0..width {
            let entry = Pool::entry_addr(base, i);
            let addr = image.words[entry] as usize;
            if addr >= image.data_len {
                return Err(McasError::BadImage("entry address outside data region"));
            }
            // exact guard: only a word still holding *this* entry's handle
            // belongs to this record's outcome.
            if mem.persistent_value(addr) != encode_handle(entry) {
                continue;
            }
            let value = if forward { image.words[entry + 2] } else { image.words[entry + 1] };
            rewrite(addr, value, &mut pending);
            rewrote += 1;
        }
        stats.words_rewritten += rewrote;
        if rewrote > 0 {
            if forward {
                stats.rolled_forward += 1;
            } else {
                stats.rolled_back += 1;
            }
        }
        if status & STATUS_DIRTY != 0 {
            rewrite(base, status_code(status), &mut pending);
            stats.dirty_cleared += 1;
        }
    }
    // one fence commits every rewrite; a crash before this point leaves each
    // written word either committed (adversarial writeback) or untouched,
    // and the guard makes a rerun settle whatever remains.
    inst.schedule_point(NO_SLOT, AccessKind::Fence, usize::MAX);
    mem.fence(&mut pending);
    inst.fenced(NO_SLOT, FenceRole::Recovery);
    Ok(stats)
}

impl Arena<SimPmem> {
    /// Point-in-time copy of the persistent plane plus pool geometry. Only
    /// meaningful as a crash while no thread is mutating (tests stop the
    /// world first).
    pub fn current_image(&self) -> CrashImage {
        CrashImage {
            data_len: self.data_len(),
            slot_words: self.pool.slot_words,
            slots: self.pool.slots,
            max_width: self.pool.max_width,
            words: self.backend().snapshot_persistent(),
        }
    }
}
