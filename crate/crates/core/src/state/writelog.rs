//! Write-log: full payload capture of writes into data directories.
//!
//! Each record carries the event metadata alongside the complete data
//! payload and offset, enabling byte-accurate selective replay onto a file
//! restored from backup. The on-disk form is line-delimited JSON with the
//! payload inline as base64.

use crate::trace::{Ns, ThreadId};
use base64::engine::general_purpose::STANDARD as B64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteLogRecord {
    pub seq: u64,
    pub ts: Ns,
    pub pid: u32,
    pub tid: u32,
    pub path: String,
    pub offset: u64,
    #[serde(with = "b64_bytes")]
    pub data: Vec<u8>,
}

impl WriteLogRecord {
    pub fn thread(&self) -> ThreadId {
        ThreadId::new(self.pid, self.tid)
    }
}

mod b64_bytes {
    use super::B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(data: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&B64.encode(data))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        B64.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum WriteLogError {
    #[error("write-log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

pub fn parse_write_log(text: &str) -> Result<Vec<WriteLogRecord>, WriteLogError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: WriteLogRecord =
            serde_json::from_str(line).map_err(|e| WriteLogError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn serialize_write_log(records: &[WriteLogRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("write-log record serializes"));
        out.push('\n');
    }
    out
}
