//! On-disk store layout.
//!
//! ```text
//! <store>/
//!   db_state.json      current database state (canonical JSON)
//!   tree.json          current file tree (canonical JSON, contents base64)
//!   baseline.json      clean baseline file tree
//!   snapshots/<ts>.json  periodic database snapshots
//!   manifests/<ts>.json  incremental backup manifests
//!   objects/<hash>       content-addressed backup bytes
//! ```
//!
//! Recovery never mutates a loaded store in place: it writes the recovered
//! state to temporary files in the same directory and renames them over the
//! originals, so a failed replay leaves the live store untouched.

use super::backup::{BackupChain, Manifest};
use super::db::{DbSnapshot, DbState};
use super::files::FileTree;
use crate::canonical::to_canonical_json;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("store decode error at {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Paths within one store directory.
#[derive(Debug, Clone)]
pub struct StoreLayout {
    pub root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StoreLayout { root: root.into() }
    }

    pub fn db_state(&self) -> PathBuf {
        self.root.join("db_state.json")
    }

    pub fn tree(&self) -> PathBuf {
        self.root.join("tree.json")
    }

    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline.json")
    }

    pub fn snapshots_dir(&self) -> PathBuf {
        self.root.join("snapshots")
    }

    pub fn manifests_dir(&self) -> PathBuf {
        self.root.join("manifests")
    }

    pub fn objects_dir(&self) -> PathBuf {
        self.root.join("objects")
    }
}

/// Fully loaded store contents.
#[derive(Debug, Clone)]
pub struct Store {
    pub db: DbState,
    pub tree: FileTree,
    pub baseline: FileTree,
    pub snapshots: Vec<DbSnapshot>,
    pub chain: BackupChain,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    Ok(())
}

/// Write then rename, so readers never observe a half-written file.
fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

impl Store {
    /// Persist a complete store into a directory.
    pub fn save(&self, layout: &StoreLayout) -> Result<(), StoreError> {
        write_file(
            &layout.db_state(),
            to_canonical_json(&self.db).as_bytes(),
        )?;
        write_file(&layout.tree(), to_canonical_json(&self.tree).as_bytes())?;
        write_file(
            &layout.baseline(),
            to_canonical_json(&self.baseline).as_bytes(),
        )?;
        for snap in &self.snapshots {
            write_file(
                &layout.snapshots_dir().join(format!("{}.json", snap.ts)),
                to_canonical_json(snap).as_bytes(),
            )?;
        }
        for manifest in &self.chain.manifests {
            write_file(
                &layout.manifests_dir().join(format!("{}.json", manifest.ts)),
                to_canonical_json(manifest).as_bytes(),
            )?;
        }
        for (hash, bytes) in &self.chain.store {
            write_file(&layout.objects_dir().join(hash), bytes)?;
        }
        Ok(())
    }

    /// Load a store directory.
    pub fn load(layout: &StoreLayout) -> Result<Store, StoreError> {
        let db: DbState = read_json(&layout.db_state())?;
        let tree: FileTree = read_json(&layout.tree())?;
        let baseline: FileTree = read_json(&layout.baseline())?;

        let mut snapshots: Vec<DbSnapshot> = Vec::new();
        let snaps_dir = layout.snapshots_dir();
        if snaps_dir.is_dir() {
            for entry in fs::read_dir(&snaps_dir).map_err(io_err(&snaps_dir))? {
                let entry = entry.map_err(io_err(&snaps_dir))?;
                snapshots.push(read_json(&entry.path())?);
            }
        }
        snapshots.sort_by_key(|s| s.ts);

        let mut manifests: Vec<Manifest> = Vec::new();
        let man_dir = layout.manifests_dir();
        if man_dir.is_dir() {
            for entry in fs::read_dir(&man_dir).map_err(io_err(&man_dir))? {
                let entry = entry.map_err(io_err(&man_dir))?;
                manifests.push(read_json(&entry.path())?);
            }
        }
        manifests.sort_by_key(|m| m.ts);

        let mut store_map: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let obj_dir = layout.objects_dir();
        if obj_dir.is_dir() {
            for entry in fs::read_dir(&obj_dir).map_err(io_err(&obj_dir))? {
                let entry = entry.map_err(io_err(&obj_dir))?;
                let hash = entry.file_name().to_string_lossy().into_owned();
                let bytes = fs::read(entry.path()).map_err(io_err(&entry.path()))?;
                store_map.insert(hash, bytes);
            }
        }

        Ok(Store {
            db,
            tree,
            baseline,
            snapshots,
            chain: BackupChain {
                manifests,
                store: store_map,
            },
        })
    }

    /// Atomically replace the live state (db + tree) with a recovered one.
    pub fn swap_live_state(
        layout: &StoreLayout,
        db: &DbState,
        tree: &FileTree,
    ) -> Result<(), StoreError> {
        write_file_atomic(&layout.db_state(), to_canonical_json(db).as_bytes())?;
        write_file_atomic(&layout.tree(), to_canonical_json(tree).as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::db::snapshot_db;
    use crate::state::files::{Classification, DirClass};
    use crate::state::incremental_backup;

    fn sample_store() -> Store {
        let classification = Classification::new(
            [
                ("/data".to_string(), DirClass::Data),
                ("/app".to_string(), DirClass::SystemApp),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        let mut tree = FileTree::new("/", classification);
        tree.write_at("/app/index.php", 0, b"<?php ?>");
        tree.write_at("/data/u.dat", 0, b"payload");
        let baseline = tree.clone();
        let db = DbState::default();
        let snapshots = vec![snapshot_db(&db, 10)];
        let chain = incremental_backup(BackupChain::default(), &tree, 10).unwrap();
        Store {
            db,
            tree,
            baseline,
            snapshots,
            chain,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = StoreLayout::new(dir.path().join("store"));
        let store = sample_store();
        store.save(&layout).unwrap();
        let loaded = Store::load(&layout).unwrap();
        assert_eq!(loaded.db, store.db);
        assert_eq!(loaded.tree, store.tree);
        assert_eq!(loaded.baseline, store.baseline);
        assert_eq!(loaded.snapshots, store.snapshots);
        assert_eq!(loaded.chain, store.chain);
    }

    #[test]
    fn swap_replaces_live_state_only() {
        let dir = tempfile::tempdir().unwrap();
        let layout = StoreLayout::new(dir.path().join("store"));
        let store = sample_store();
        store.save(&layout).unwrap();
        let mut new_tree = store.tree.clone();
        new_tree.entries.remove("/data/u.dat");
        Store::swap_live_state(&layout, &store.db, &new_tree).unwrap();
        let loaded = Store::load(&layout).unwrap();
        assert_eq!(loaded.tree, new_tree);
        assert_eq!(loaded.baseline, store.baseline);
    }
}
