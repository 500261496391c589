use core::fmt;

/// Errors surfaced by the arena API. Algorithmic paths (`mcas`, `read`) are
/// infallible once their descriptor was built; everything that can go wrong
/// is rejected at construction or registration time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McasError {
    /// A descriptor must target at least one word.
    EmptyDescriptor,
    /// The same address appears twice in one descriptor.
    DuplicateAddress(usize),
    /// Target address outside the registered data region.
    InvalidAddress(usize),
    /// Application value with the mark bit set (reserved for handles).
    MarkedValue(u64),
    /// More target words than the arena's configured `max_width`.
    TooWide { requested: usize, max: usize },
    /// The per-thread descriptor pool ran out of record slots.
    PoolExhausted,
    /// All `max_threads` registration slots are taken.
    ThreadCapacity,
    /// `epoch_enter` while already inside an epoch, or `epoch_exit` outside.
    EpochParity,
    /// Retire called on a descriptor whose status is still ACTIVE, or twice.
    RetireViolation,
    /// Detach called on a descriptor that is not finalized.
    DetachActive,
    /// Crash image bytes do not parse (bad magic, version, or geometry).
    BadImage(&'static str),
}

impl fmt::Display for McasError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            McasError::EmptyDescriptor => write!(f, "descriptor targets no words"),
            McasError::DuplicateAddress(a) => write!(f, "address {a} appears twice in descriptor"),
            McasError::InvalidAddress(a) => write!(f, "address {a} is outside the data region"),
            McasError::MarkedValue(v) => {
                write!(f, "value {v:#x} has the mark bit set (reserved for handles)")
            }
            McasError::TooWide { requested, max } => {
                write!(f, "descriptor width {requested} exceeds max_width {max}")
            }
            McasError::PoolExhausted => write!(f, "descriptor pool exhausted"),
            McasError::ThreadCapacity => write!(f, "all thread slots registered"),
            McasError::EpochParity => write!(f, "epoch enter/exit parity violation"),
            McasError::RetireViolation => {
                write!(f, "retire of an ACTIVE or already-retired descriptor")
            }
            McasError::DetachActive => write!(f, "detach of a non-finalized descriptor"),
            McasError::BadImage(why) => write!(f, "malformed crash image: {why}"),
        }
    }
}

impl core::error::Error for McasError {}
