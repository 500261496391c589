//! Lock-free multi-word compare-and-swap (MCAS) over a registered word arena.
//!
//! The main algorithm installs one per-word descriptor handle per target word
//! (k CASes) plus one status CAS, and defers the removal of installed handles
//! to an epoch-based reclamation pass instead of unlocking words inline. An
//! uncontended successful k-word operation therefore costs k+1 CASes; the
//! classic Harris-style baseline ([`harris`]) costs 3k+1 and is included for
//! comparison and for differential testing.
//!
//! The same engine runs over two memory backends:
//!
//! * [`VolatileMem`]: plain atomic words.
//! * [`SimPmem`]: simulated persistent memory with explicit flush/fence
//!   instructions, spontaneous writebacks, and crash images. On this backend
//!   every operation is durably linearizable at a cost of exactly two fences
//!   on the uncontended path, and [`recover`] repairs a crash image
//!   single-threadedly.
//!
//! ```
//! use mcas_core::{Arena, ArenaOptions};
//!
//! let arena = Arena::new_volatile(ArenaOptions::new(8, 2));
//! let mut t = arena.register_thread().unwrap();
//! let d = arena
//!     .make_descriptor(&mut t, &[(0, 0, 10), (3, 0, 14)])
//!     .unwrap();
//! assert!(arena.mcas(&mut t, d));
//! assert_eq!(arena.read(&mut t, 3), 14);
//! ```
//!
//! Words hold either an application value (mark bit clear) or a descriptor
//! handle (mark bit set); application values are rejected if their low bit is
//! set. All atomics use `SeqCst`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod arena;
mod desc;
mod epoch;
mod error;
pub mod harris;
mod instrument;
mod mem;
mod recovery;
mod word;

pub use arena::{Arena, ArenaOptions, Descriptor, PmArena, ThreadHandle, VolatileArena};
pub use desc::{
    entry_address, is_finalized, record_words, status_code, DescId, StatusCode, STATUS_ACTIVE,
    STATUS_CODE_MASK, STATUS_DIRTY, STATUS_FAILED, STATUS_SUCCESSFUL,
};
pub use error::McasError;
pub use instrument::{AccessKind, CasRole, FenceRole, Instrument, NoopInstrument};
pub use mem::{CrashImage, MemBackend, SimPmem, VolatileMem, IMAGE_FORMAT_VERSION};
pub use recovery::{assemble, recover, recover_bytes, settle, RecoveryStats};
pub use word::{decode_handle, encode_handle, encode_value, is_handle};

/// Slot id used for instrumentation callbacks issued outside any registered
/// thread (arena construction, recovery).
pub const NO_SLOT: usize = usize::MAX;
