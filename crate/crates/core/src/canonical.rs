//! Canonical serialization helpers.
//!
//! Everything persisted for audit (snapshots, manifests, plans, bundles) is
//! serialized as compact JSON with lexicographically sorted object keys, so
//! identical states always produce identical bytes. Content ids are SHA-256
//! hex digests over those bytes.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Compact JSON with sorted keys. All map-like structures in this crate are
/// backed by `BTreeMap` (including `serde_json::Value` objects), so plain
/// serialization is already canonical.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("canonical serialization cannot fail")
}

/// SHA-256 hex digest of a byte slice.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// SHA-256 hex digest of a value's canonical JSON form.
pub fn hash_canonical<T: Serialize>(value: &T) -> String {
    content_hash(to_canonical_json(value).as_bytes())
}
