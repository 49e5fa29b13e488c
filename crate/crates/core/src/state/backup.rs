//! Incremental backup chain with content-addressed deduplication.
//!
//! Each backup is a manifest mapping path → content hash at a point in
//! time; bytes live once in a shared store keyed by hash. Unchanged files
//! in a new backup reference the same hashes as the previous manifest, the
//! logical equivalent of hard-linking unchanged files to their counterparts
//! in the prior backup. Only data-classified paths are backed up;
//! system/application directories have a baseline instead.

use super::files::{DirClass, FileTree};
use crate::canonical::content_hash;
use crate::trace::Ns;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub ts: Ns,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupChain {
    pub manifests: Vec<Manifest>,
    #[serde(with = "crate::state::b64_map")]
    pub store: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Error)]
pub enum BackupError {
    #[error("backup ts {ts} is not greater than last chain ts {last}")]
    NonMonotoneTs { ts: Ns, last: Ns },
    #[error("no backup at or before ts {0}")]
    NoBackupBefore(Ns),
    #[error("manifest references unknown hash {0}")]
    UnknownHash(String),
}

impl BackupChain {
    pub fn last_ts(&self) -> Option<Ns> {
        self.manifests.last().map(|m| m.ts)
    }

    /// Latest manifest with `ts <= at`.
    pub fn manifest_at(&self, at: Ns) -> Result<&Manifest, BackupError> {
        self.manifests
            .iter()
            .rev()
            .find(|m| m.ts <= at)
            .ok_or(BackupError::NoBackupBefore(at))
    }

    /// Total bytes held in the content store.
    pub fn store_bytes(&self) -> usize {
        self.store.values().map(|v| v.len()).sum()
    }
}

/// Take an incremental backup of the tree's data-classified entries.
/// Unchanged files share hashes with the prior manifest, so they add zero
/// new store bytes.
pub fn incremental_backup(
    mut chain: BackupChain,
    tree: &FileTree,
    ts: Ns,
) -> Result<BackupChain, BackupError> {
    if let Some(last) = chain.last_ts() {
        if ts <= last {
            return Err(BackupError::NonMonotoneTs { ts, last });
        }
    }
    let mut files = BTreeMap::new();
    for (path, bytes) in &tree.entries {
        if tree.classification.classify(path) != Ok(DirClass::Data) {
            continue;
        }
        let hash = content_hash(bytes);
        chain.store.entry(hash.clone()).or_insert_with(|| bytes.clone());
        files.insert(path.clone(), hash);
    }
    chain.manifests.push(Manifest { ts, files });
    Ok(chain)
}

/// Content of `path` as of the latest backup at or before `ts`; `None` when
/// the path was absent from that backup.
pub fn restore_file_version<'a>(
    chain: &'a BackupChain,
    path: &str,
    ts: Ns,
) -> Result<Option<&'a [u8]>, BackupError> {
    let manifest = chain.manifest_at(ts)?;
    match manifest.files.get(path) {
        None => Ok(None),
        Some(hash) => chain
            .store
            .get(hash)
            .map(|v| Some(v.as_slice()))
            .ok_or_else(|| BackupError::UnknownHash(hash.clone())),
    }
}
