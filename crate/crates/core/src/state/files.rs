//! Sandboxed file tree with directory classification.
//!
//! The recoverable world's file system is a map from absolute, normalized
//! paths to byte contents. Every path resolves to exactly one directory
//! class: system/application directories are static during normal operation
//! and restored wholesale from a baseline; data directories take writes
//! from both legitimate and malicious requests and are recovered by
//! incremental replay.

use crate::canonical::content_hash;
use crate::provenance::{FileOpKind, FileOperation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirClass {
    SystemApp,
    Data,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FsError {
    #[error("path {0:?} is not absolute and normalized")]
    BadPath(String),
    #[error("classification prefixes overlap: {0:?} and {1:?}")]
    OverlappingPrefixes(String, String),
    #[error("path {0:?} matches no classification prefix")]
    ClassificationGap(String),
    #[error("{kind} on {path:?} requires {what}")]
    MissingPayload {
        kind: FileOpKind,
        path: String,
        what: &'static str,
    },
    #[error("path {0:?} is not under a system/application prefix")]
    NotSystemPath(String),
}

/// Validate an absolute normalized path: leading slash, no empty or dot
/// segments, no trailing slash.
pub fn validate_path(path: &str) -> Result<(), FsError> {
    let bad = || FsError::BadPath(path.to_string());
    if !path.starts_with('/') || path.len() < 2 || path.ends_with('/') {
        return Err(bad());
    }
    for seg in path[1..].split('/') {
        if seg.is_empty() || seg == "." || seg == ".." {
            return Err(bad());
        }
    }
    Ok(())
}

/// Non-overlapping path-prefix classification.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    /// Prefix → class; prefixes are directory paths without trailing slash.
    pub prefixes: BTreeMap<String, DirClass>,
}

impl Classification {
    pub fn new(prefixes: BTreeMap<String, DirClass>) -> Result<Self, FsError> {
        let keys: Vec<&String> = prefixes.keys().collect();
        for (i, a) in keys.iter().enumerate() {
            validate_path(a).map_err(|_| FsError::BadPath((*a).clone()))?;
            for b in keys.iter().skip(i + 1) {
                if covers(a, b) || covers(b, a) {
                    return Err(FsError::OverlappingPrefixes((*a).clone(), (*b).clone()));
                }
            }
        }
        Ok(Classification { prefixes })
    }

    /// Resolve a path to its class; a gap aborts the caller's run.
    pub fn classify(&self, path: &str) -> Result<DirClass, FsError> {
        for (prefix, class) in &self.prefixes {
            if covers(prefix, path) {
                return Ok(*class);
            }
        }
        Err(FsError::ClassificationGap(path.to_string()))
    }
}

/// Whether `prefix` covers `path` at a path-segment boundary.
fn covers(prefix: &str, path: &str) -> bool {
    path == prefix || (path.starts_with(prefix) && path.as_bytes().get(prefix.len()) == Some(&b'/'))
}

/// In-memory file tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTree {
    pub root: String,
    #[serde(with = "crate::state::b64_map")]
    pub entries: BTreeMap<String, Vec<u8>>,
    pub classification: Classification,
}

/// Note emitted for loss-tolerant no-ops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileNote {
    pub path: String,
    pub action: &'static str,
}

impl FileTree {
    pub fn new(root: &str, classification: Classification) -> Self {
        FileTree {
            root: root.to_string(),
            entries: BTreeMap::new(),
            classification,
        }
    }

    pub fn content(&self, path: &str) -> Option<&[u8]> {
        self.entries.get(path).map(|v| v.as_slice())
    }

    /// Deterministic content hash over all entries.
    pub fn tree_hash(&self) -> String {
        let mut acc = String::new();
        for (path, bytes) in &self.entries {
            acc.push_str(path);
            acc.push('\0');
            acc.push_str(&content_hash(bytes));
            acc.push('\n');
        }
        content_hash(acc.as_bytes())
    }

    /// Write bytes at an offset, zero-filling any gap beyond EOF and
    /// creating the file if absent.
    pub fn write_at(&mut self, path: &str, offset: u64, data: &[u8]) {
        let entry = self.entries.entry(path.to_string()).or_default();
        let offset = offset as usize;
        if entry.len() < offset {
            entry.resize(offset, 0);
        }
        let end = offset + data.len();
        if entry.len() < end {
            entry.resize(end, 0);
        }
        entry[offset..end].copy_from_slice(data);
    }
}

/// Apply one file operation, returning the new tree plus a note for
/// loss-tolerant no-ops. Writes imply creation; delete/rename of an absent
/// path is a diagnostic no-op.
pub fn apply_file_op(
    mut tree: FileTree,
    op: &FileOperation,
    payload: Option<&[u8]>,
) -> Result<(FileTree, Option<FileNote>), FsError> {
    validate_path(&op.path)?;
    let mut note = None;
    match op.kind {
        FileOpKind::Create => {
            tree.entries.entry(op.path.clone()).or_default();
        }
        FileOpKind::Write => {
            let data = payload.ok_or(FsError::MissingPayload {
                kind: op.kind,
                path: op.path.clone(),
                what: "payload bytes",
            })?;
            let offset = op.payload.as_ref().map(|p| p.offset).unwrap_or(0);
            if !tree.entries.contains_key(&op.path) {
                note = Some(FileNote {
                    path: op.path.clone(),
                    action: "write_created",
                });
            }
            tree.write_at(&op.path, offset, data);
        }
        FileOpKind::Delete => {
            if tree.entries.remove(&op.path).is_none() {
                note = Some(FileNote {
                    path: op.path.clone(),
                    action: "delete_missing",
                });
            }
        }
        FileOpKind::Rename => {
            let to = op.rename_to.clone().ok_or(FsError::MissingPayload {
                kind: op.kind,
                path: op.path.clone(),
                what: "rename_to",
            })?;
            validate_path(&to)?;
            match tree.entries.remove(&op.path) {
                Some(bytes) => {
                    tree.entries.insert(to, bytes);
                }
                None => {
                    note = Some(FileNote {
                        path: op.path.clone(),
                        action: "rename_missing",
                    });
                }
            }
        }
    }
    Ok((tree, note))
}

/// Overwrite one system/application path from the clean baseline: restore
/// the baseline bytes, or remove the file when the baseline marks it
/// absent.
pub fn baseline_restore(
    mut tree: FileTree,
    path: &str,
    baseline: &FileTree,
) -> Result<FileTree, FsError> {
    if tree.classification.classify(path)? != DirClass::SystemApp {
        return Err(FsError::NotSystemPath(path.to_string()));
    }
    match baseline.content(path) {
        Some(bytes) => {
            tree.entries.insert(path.to_string(), bytes.to_vec());
        }
        None => {
            tree.entries.remove(path);
        }
    }
    Ok(tree)
}
