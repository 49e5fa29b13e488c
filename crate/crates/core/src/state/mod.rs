//! The recoverable world: deterministic database model, sandboxed file
//! tree, snapshot/backup chains, write-log, and the on-disk store layout
//! that rewind/replay acts on.

pub mod backup;
pub mod db;
pub mod files;
pub mod store;
pub mod writelog;

pub use backup::{incremental_backup, restore_file_version, BackupChain, BackupError, Manifest};
pub use db::{
    apply_db_op, parse_statement, restore_db, snapshot_db, ApplyNote, DbSnapshot, DbState, Row,
    StateError, Statement,
};
pub use files::{
    apply_file_op, baseline_restore, validate_path, Classification, DirClass, FileNote, FileTree,
    FsError,
};
pub use store::{Store, StoreError, StoreLayout};
pub use writelog::{parse_write_log, serialize_write_log, WriteLogError, WriteLogRecord};

/// Serde helper: `BTreeMap<String, Vec<u8>>` as a map of base64 strings.
pub(crate) mod b64_map {
    use base64::engine::general_purpose::STANDARD as B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<String, Vec<u8>>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let encoded: BTreeMap<&str, String> = map
            .iter()
            .map(|(k, v)| (k.as_str(), B64.encode(v)))
            .collect();
        serde::Serialize::serialize(&encoded, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let encoded: BTreeMap<String, String> = BTreeMap::deserialize(de)?;
        encoded
            .into_iter()
            .map(|(k, v)| Ok((k, B64.decode(v).map_err(serde::de::Error::custom)?)))
            .collect()
    }
}
