//! Word encoding: one reserved low-order mark bit distinguishes descriptor
//! handles from application values.
//!
//! A raw word with the mark bit set is a handle; the remaining 63 bits carry
//! the pool word-offset of a per-word descriptor entry. A raw word with the
//! mark bit clear is the application value itself (identity encoding), so
//! application values are 63-bit-effective: the API rejects values whose low
//! bit is set.

use crate::error::McasError;

/// Low-order tag reserved for descriptor handles.
pub const MARK_BIT: u64 = 1;

/// True if the raw word encodes a descriptor handle.
#[inline]
pub fn is_handle(raw: u64) -> bool {
    raw & MARK_BIT != 0
}

/// Validate and encode an application value (identity; mark bit must be clear).
#[inline]
pub fn encode_value(value: u64) -> Result<u64, McasError> {
    if value & MARK_BIT != 0 {
        return Err(McasError::MarkedValue(value));
    }
    Ok(value)
}

/// Encode a per-word descriptor entry offset as a handle.
#[inline]
pub fn encode_handle(entry_offset: usize) -> u64 {
    ((entry_offset as u64) << 1) | MARK_BIT
}

/// Recover the entry offset from a handle. Caller must have checked
/// [`is_handle`].
#[inline]
pub fn decode_handle(raw: u64) -> usize {
    debug_assert!(is_handle(raw));
    (raw >> 1) as usize
}
