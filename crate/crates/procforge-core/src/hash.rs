//! FNV-1a content fingerprints.
//!
//! Used as mock-backend fixture keys (hash of a candidate body) and for
//! golden-file and idempotence checks. Not cryptographic.

use alloc::string::String;
use core::fmt::Write;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// 16-char lowercase hex fingerprint of a text.
pub fn content_hash(text: &str) -> String {
    let mut out = String::with_capacity(16);
    let _ = write!(out, "{:016x}", fnv1a64(text.as_bytes()));
    out
}
