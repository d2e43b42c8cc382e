//! SHA-256 helpers for content addressing.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex digest of length-prefixed parts, so `("ab", "c")` and `("a", "bc")` differ.
pub fn digest_parts<I, P>(parts: I) -> String
where
    I: IntoIterator<Item = P>,
    P: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for part in parts {
        let part = part.as_ref();
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Hex digest of a value's JSON serialization.
pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(bytes))
}
