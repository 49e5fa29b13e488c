//! Ground truth emitted alongside simulated traces.
//!
//! Two label maps coexist deliberately. `unit_labels` cover exactly the
//! syscalls emitted on a request's own thread between its delimiters — what
//! partitioning must recover. `causal_labels` additionally cover descendant
//! process activity and database-side work — what provenance and
//! attribution must recover. Labels are total over emitted events and keyed
//! `host:seq`, so they survive event-loss injection.

use crate::partition::ServerModel;
use crate::recovery::OpKey;
use crate::provenance::FileOpKind;
use crate::state::{DbState, FileTree};
use crate::trace::{Ns, RequestId, ThreadId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbOpLabel {
    pub ts: Ns,
    pub statement: String,
    pub request_id: RequestId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileOpLabel {
    pub ts: Ns,
    pub path: String,
    pub kind: FileOpKind,
    pub offset: u64,
    pub request_id: RequestId,
}

/// One exclusive use of a pooled connection by one request, measured over
/// the syscalls that actually touched the tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BorrowSpan {
    pub tuple: String,
    pub first_use: Ns,
    pub last_use: Ns,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalTruth {
    pub tuple: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub server_model: ServerModel,
    pub stmt_log_path: String,
    pub db_endpoints: Vec<String>,
    /// Request ids in start order.
    pub request_ids: Vec<RequestId>,
    pub malicious: BTreeSet<RequestId>,
    /// host:seq → request id, for syscalls inside delimiter intervals.
    pub unit_labels: BTreeMap<String, RequestId>,
    /// host:seq → request id, including descendants and database work.
    pub causal_labels: BTreeMap<String, RequestId>,
    pub db_op_labels: Vec<DbOpLabel>,
    pub file_op_labels: Vec<FileOpLabel>,
    /// Ground-truth operation set per non-malicious request.
    pub q: BTreeMap<RequestId, BTreeSet<OpKey>>,
    pub benign_db: DbState,
    pub benign_tree: FileTree,
    pub final_db_hash: String,
    pub final_tree_hash: String,
    pub pool_borrows: BTreeMap<RequestId, Vec<BorrowSpan>>,
    pub worker_table: BTreeMap<String, ThreadId>,
    pub external: BTreeMap<RequestId, Vec<ExternalTruth>>,
}

impl GroundTruth {
    pub fn label_key(host: &str, seq: u64) -> String {
        format!("{host}:{seq}")
    }

    /// Benign request ids in start order.
    pub fn benign_ids(&self) -> Vec<RequestId> {
        self.request_ids
            .iter()
            .filter(|r| !self.malicious.contains(*r))
            .cloned()
            .collect()
    }
}
