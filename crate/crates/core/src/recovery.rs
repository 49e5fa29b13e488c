//! Rollback-filter-replay recovery for database and file system.
//!
//! Database: pick the latest clean snapshot older than the earliest
//! malicious operation, roll back to it, then replay every logged operation
//! after the snapshot except the malicious ones, in original order.
//!
//! File system: per affected path, system/application files are overwritten
//! from the clean baseline (attacker-created files with no baseline entry
//! are deleted); data files are restored to their latest pre-attack backup
//! version and legitimate write-log records are replayed over it; files
//! where blind replay could corrupt structure go through an interactive
//! decision instead.
//!
//! Planning is pure. Execution builds the recovered state aside so a failed
//! replay never corrupts the live store; callers swap on success.

use crate::attribution::DbOperation;
use crate::provenance::{FileOpKind, FileOperation};
use crate::state::backup::{restore_file_version, BackupChain};
use crate::state::db::{restore_db, ApplyNote, DbSnapshot, DbState};
use crate::state::files::{baseline_restore, DirClass, FileTree, FsError};
use crate::state::writelog::WriteLogRecord;
use crate::trace::{Ns, RequestId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("no clean snapshot older than the earliest malicious operation (ts {min_malicious_ts})")]
    NoCleanSnapshot { min_malicious_ts: Ns },
    #[error("path classification gap: {0}")]
    Classification(#[from] FsError),
    #[error("replay failed: {0}")]
    Replay(#[from] crate::state::db::StateError),
    #[error("backup chain error: {0}")]
    Backup(#[from] crate::state::backup::BackupError),
    #[error("decision provider aborted at {path:?}: {reason}")]
    ProviderAbort { path: String, reason: String },
    #[error("request universes differ: {only_in_p} ids only in restored sets, {only_in_q} only in ground truth")]
    UniverseMismatch { only_in_p: usize, only_in_q: usize },
}

/// Canonical operation identity used for restored-set accounting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum OpKey {
    Db {
        ts: Ns,
        statement: String,
    },
    File {
        ts: Ns,
        path: String,
        kind: FileOpKind,
        offset: u64,
    },
}

impl OpKey {
    pub fn from_db(op: &DbOperation) -> OpKey {
        OpKey::Db {
            ts: op.ts,
            statement: op.statement.clone(),
        }
    }

    pub fn from_file(op: &FileOperation) -> OpKey {
        OpKey::File {
            ts: op.ts,
            path: op.path.clone(),
            kind: op.kind,
            offset: op.payload.as_ref().map(|p| p.offset).unwrap_or(0),
        }
    }
}

/// Database half of a recovery plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DbPlan {
    pub baseline: DbSnapshot,
    pub replay: Vec<DbOperation>,
    pub filtered: usize,
}

/// Per-file recovery action.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum FsAction {
    /// Overwrite from the clean baseline; paths absent there are deleted.
    BaselineRestore { path: String },
    /// Restore the pre-attack backup version, then replay legitimate
    /// write-log records in order.
    IncrementalReplay {
        path: String,
        base_manifest_ts: Option<Ns>,
        replay: Vec<WriteLogRecord>,
    },
    /// Present the full flagged history and let the operator decide.
    Interactive {
        path: String,
        base_manifest_ts: Option<Ns>,
        history: Vec<FlaggedWrite>,
    },
}

impl FsAction {
    pub fn path(&self) -> &str {
        match self {
            FsAction::BaselineRestore { path }
            | FsAction::IncrementalReplay { path, .. }
            | FsAction::Interactive { path, .. } => path,
        }
    }
}

/// A write-log record plus its malicious flag, for interactive review.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlaggedWrite {
    pub record: WriteLogRecord,
    pub malicious: bool,
}

/// Complete recovery plan, serializable for audit before execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub db: DbPlan,
    pub fs: Vec<FsAction>,
}

/// Operator choice for an interactive action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractiveChoice {
    FullRollback,
    SelectiveReplay,
    Skip,
}

/// Supplies a choice for every interactive action: CLI prompts in
/// production, scripted answers in tests.
pub trait DecisionProvider {
    fn decide(
        &mut self,
        path: &str,
        history: &[FlaggedWrite],
    ) -> Result<InteractiveChoice, String>;
}

/// Scripted provider: a path → choice table.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct ScriptedDecisions {
    pub decisions: BTreeMap<String, InteractiveChoice>,
}

impl DecisionProvider for ScriptedDecisions {
    fn decide(
        &mut self,
        path: &str,
        _history: &[FlaggedWrite],
    ) -> Result<InteractiveChoice, String> {
        self.decisions
            .get(path)
            .copied()
            .ok_or_else(|| format!("no scripted decision for {path}"))
    }
}

/// Match key for filtering: (ts, statement) with worker compatibility.
/// Statement text alone collides across requests; the worker component
/// disambiguates when both sides were observed in the same log domain.
fn matches_malicious(op: &DbOperation, malicious: &DbOperation) -> bool {
    op.ts == malicious.ts
        && op.statement == malicious.statement
        && op.worker.compatible(&malicious.worker)
}

/// Plan the database recovery.
///
/// Baseline is the latest snapshot strictly older than the earliest
/// malicious operation (latest snapshot overall when nothing is malicious:
/// identity recovery). Replay keeps every logged operation after the
/// baseline except the malicious ones, original order preserved.
pub fn plan_db_recovery(
    malicious: &[DbOperation],
    snapshots: &[DbSnapshot],
    full_log: &[DbOperation],
) -> Result<DbPlan, RecoveryError> {
    let min_mal_ts = malicious.iter().map(|m| m.ts).min();
    let baseline = match min_mal_ts {
        Some(min) => snapshots
            .iter()
            .filter(|s| s.ts < min)
            .max_by_key(|s| s.ts)
            .ok_or(RecoveryError::NoCleanSnapshot {
                min_malicious_ts: min,
            })?,
        None => snapshots
            .iter()
            .max_by_key(|s| s.ts)
            .ok_or(RecoveryError::NoCleanSnapshot { min_malicious_ts: 0 })?,
    };

    let mut remaining: Vec<&DbOperation> = malicious.iter().collect();
    let mut replay = Vec::new();
    let mut filtered = 0;
    for op in full_log {
        if op.ts <= baseline.ts {
            continue;
        }
        if let Some(pos) = remaining.iter().position(|m| matches_malicious(op, m)) {
            remaining.swap_remove(pos);
            filtered += 1;
            continue;
        }
        replay.push(op.clone());
    }

    Ok(DbPlan {
        baseline: baseline.clone(),
        replay,
        filtered,
    })
}

/// Result of executing the database half: recovered state plus dependency
/// warnings (operations that no-opped because they referenced rows the
/// filtered malicious operations would have created).
#[derive(Debug)]
pub struct DbRecoveryResult {
    pub state: DbState,
    pub dependency_warnings: Vec<ApplyNote>,
}

/// Execute a database plan against a copy of the baseline. Any statement
/// parse failure aborts with the store untouched.
pub fn execute_db_recovery(plan: &DbPlan) -> Result<DbRecoveryResult, RecoveryError> {
    let mut state = restore_db(&plan.baseline)?;
    let mut warnings = Vec::new();
    for op in &plan.replay {
        let (next, note) = crate::state::db::apply_db_op(state, op)?;
        state = next;
        if let Some(n) = note {
            warnings.push(n);
        }
    }
    Ok(DbRecoveryResult {
        state,
        dependency_warnings: warnings,
    })
}

/// Configuration for file-system planning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FsPlanConfig {
    /// Extensions routed to interactive recovery: structured or binary
    /// files where omitting malicious writes during replay could corrupt
    /// content.
    pub interactive_extensions: Vec<String>,
}

impl Default for FsPlanConfig {
    fn default() -> Self {
        FsPlanConfig {
            interactive_extensions: [".db", ".sqlite", ".bin", ".so", ".exe"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

fn is_interactive_path(path: &str, config: &FsPlanConfig) -> bool {
    config
        .interactive_extensions
        .iter()
        .any(|ext| path.ends_with(ext.as_str()))
}

fn malicious_write_key(op: &FileOperation) -> Option<(Ns, u32, u32, String, u64)> {
    let p = op.payload.as_ref()?;
    Some((op.ts, op.actor.pid, op.actor.tid, op.path.clone(), p.offset))
}

fn record_key(rec: &WriteLogRecord) -> (Ns, u32, u32, String, u64) {
    (rec.ts, rec.pid, rec.tid, rec.path.clone(), rec.offset)
}

/// Plan the file-system recovery for all paths touched by malicious
/// operations.
pub fn plan_fs_recovery(
    malicious: &[FileOperation],
    tree: &FileTree,
    chain: &BackupChain,
    write_log: &[WriteLogRecord],
    config: &FsPlanConfig,
) -> Result<Vec<FsAction>, RecoveryError> {
    // Affected paths: operation targets plus rename destinations.
    let mut affected: BTreeSet<String> = BTreeSet::new();
    for op in malicious {
        affected.insert(op.path.clone());
        if let Some(to) = &op.rename_to {
            affected.insert(to.clone());
        }
    }

    let malicious_keys: BTreeSet<_> = malicious.iter().filter_map(malicious_write_key).collect();

    let mut actions = Vec::new();
    for path in affected {
        let class = tree.classification.classify(&path)?;
        if class == DirClass::SystemApp {
            actions.push(FsAction::BaselineRestore { path });
            continue;
        }

        let min_mal_ts = malicious
            .iter()
            .filter(|op| op.path == path || op.rename_to.as_deref() == Some(path.as_str()))
            .map(|op| op.ts)
            .min()
            .unwrap_or(Ns::MAX);

        // Base version strictly precedes the first malicious touch.
        let base_manifest_ts = chain
            .manifests
            .iter()
            .rev()
            .find(|m| m.ts < min_mal_ts)
            .map(|m| m.ts);

        let history: Vec<FlaggedWrite> = write_log
            .iter()
            .filter(|r| r.path == path)
            .map(|r| FlaggedWrite {
                malicious: malicious_keys.contains(&record_key(r)),
                record: r.clone(),
            })
            .collect();

        if is_interactive_path(&path, config) {
            actions.push(FsAction::Interactive {
                path,
                base_manifest_ts,
                history,
            });
            continue;
        }

        match base_manifest_ts {
            Some(base_ts) => {
                let replay: Vec<WriteLogRecord> = history
                    .iter()
                    .filter(|fw| !fw.malicious && fw.record.ts > base_ts)
                    .map(|fw| fw.record.clone())
                    .collect();
                actions.push(FsAction::IncrementalReplay {
                    path,
                    base_manifest_ts: Some(base_ts),
                    replay,
                });
            }
            // No backup predates the attack: degrade to interactive rather
            // than failing the whole run.
            None => actions.push(FsAction::Interactive {
                path,
                base_manifest_ts: None,
                history,
            }),
        }
    }
    Ok(actions)
}

fn rebuild_from_base(
    tree: &mut FileTree,
    chain: &BackupChain,
    path: &str,
    base_manifest_ts: Option<Ns>,
    replay: &[WriteLogRecord],
) -> Result<(), RecoveryError> {
    let base = match base_manifest_ts {
        Some(ts) => restore_file_version(chain, path, ts)?.map(|b| b.to_vec()),
        None => None,
    };
    match base {
        Some(bytes) => {
            tree.entries.insert(path.to_string(), bytes);
        }
        None => {
            tree.entries.remove(path);
        }
    }
    for rec in replay {
        tree.write_at(path, rec.offset, &rec.data);
    }
    Ok(())
}

/// Execute a file-system plan over a copy of the tree.
pub fn execute_fs_recovery(
    actions: &[FsAction],
    tree: &FileTree,
    chain: &BackupChain,
    baseline: &FileTree,
    provider: &mut dyn DecisionProvider,
) -> Result<(FileTree, BTreeMap<String, InteractiveChoice>), RecoveryError> {
    let mut recovered = tree.clone();
    let mut choices = BTreeMap::new();
    for action in actions {
        match action {
            FsAction::BaselineRestore { path } => {
                recovered = baseline_restore(recovered, path, baseline)?;
            }
            FsAction::IncrementalReplay {
                path,
                base_manifest_ts,
                replay,
            } => {
                rebuild_from_base(&mut recovered, chain, path, *base_manifest_ts, replay)?;
            }
            FsAction::Interactive {
                path,
                base_manifest_ts,
                history,
            } => {
                let choice = provider.decide(path, history).map_err(|reason| {
                    RecoveryError::ProviderAbort {
                        path: path.clone(),
                        reason,
                    }
                })?;
                choices.insert(path.clone(), choice);
                match choice {
                    InteractiveChoice::Skip => {}
                    InteractiveChoice::FullRollback => {
                        rebuild_from_base(&mut recovered, chain, path, *base_manifest_ts, &[])?;
                    }
                    InteractiveChoice::SelectiveReplay => {
                        let replay: Vec<WriteLogRecord> = history
                            .iter()
                            .filter(|fw| {
                                !fw.malicious
                                    && base_manifest_ts.is_none_or(|b| fw.record.ts > b)
                            })
                            .map(|fw| fw.record.clone())
                            .collect();
                        rebuild_from_base(
                            &mut recovered,
                            chain,
                            path,
                            *base_manifest_ts,
                            &replay,
                        )?;
                    }
                }
            }
        }
    }
    Ok((recovered, choices))
}

/// Per-request attributed operations, the input to restored-set accounting.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RequestOps {
    pub db_ops: Vec<DbOperation>,
    pub file_ops: Vec<FileOperation>,
}

/// Outcome of a full recovery run.
#[derive(Debug)]
pub struct RecoveryOutcome {
    pub recovered_db: DbState,
    pub recovered_tree: FileTree,
    /// Restored-operation set per non-malicious request.
    pub restored: BTreeMap<RequestId, BTreeSet<OpKey>>,
    pub dependency_warnings: Vec<ApplyNote>,
    pub interactive_choices: BTreeMap<String, InteractiveChoice>,
}

/// Compute, per benign request, which of its attributed operations survive
/// in the recovered state: preserved by the baseline, replayed, or on paths
/// recovery never touched.
pub fn compute_restored_sets(
    per_request: &BTreeMap<RequestId, RequestOps>,
    malicious_ids: &BTreeSet<RequestId>,
    db_plan: &DbPlan,
    fs_actions: &[FsAction],
    interactive_choices: &BTreeMap<String, InteractiveChoice>,
) -> BTreeMap<RequestId, BTreeSet<OpKey>> {
    let replayed_db: BTreeSet<(Ns, &str)> = db_plan
        .replay
        .iter()
        .map(|op| (op.ts, op.statement.as_str()))
        .collect();
    let action_by_path: BTreeMap<&str, &FsAction> =
        fs_actions.iter().map(|a| (a.path(), a)).collect();

    let mut restored = BTreeMap::new();
    for (rid, ops) in per_request {
        if malicious_ids.contains(rid) {
            continue;
        }
        let mut set = BTreeSet::new();
        for op in &ops.db_ops {
            let preserved = op.ts <= db_plan.baseline.ts;
            let replayed = replayed_db.contains(&(op.ts, op.statement.as_str()));
            if preserved || replayed {
                set.insert(OpKey::from_db(op));
            }
        }
        for op in &ops.file_ops {
            let survives = match action_by_path.get(op.path.as_str()) {
                None => true,
                Some(FsAction::BaselineRestore { .. }) => false,
                Some(FsAction::IncrementalReplay { replay, .. }) => replay.iter().any(|r| {
                    r.ts == op.ts
                        && r.path == op.path
                        && r.pid == op.actor.pid
                        && r.tid == op.actor.tid
                        && r.offset == op.payload.as_ref().map(|p| p.offset).unwrap_or(0)
                }),
                Some(FsAction::Interactive {
                    base_manifest_ts,
                    history,
                    ..
                }) => match interactive_choices.get(op.path.as_str()) {
                    Some(InteractiveChoice::Skip) | None => true,
                    Some(InteractiveChoice::FullRollback) => base_manifest_ts
                        .is_some_and(|b| op.ts <= b),
                    Some(InteractiveChoice::SelectiveReplay) => history.iter().any(|fw| {
                        !fw.malicious
                            && base_manifest_ts.is_none_or(|b| fw.record.ts > b)
                            && fw.record.ts == op.ts
                            && fw.record.path == op.path
                    }),
                },
            };
            if survives {
                set.insert(OpKey::from_file(op));
            }
        }
        restored.insert(rid.clone(), set);
    }
    restored
}

/// Strict recovery accuracy: the fraction of requests whose restored
/// operation set exactly equals ground truth. Any omission or collateral
/// change fails the request.
pub fn compute_recovery_accuracy(
    restored: &BTreeMap<RequestId, BTreeSet<OpKey>>,
    ground_truth: &BTreeMap<RequestId, BTreeSet<OpKey>>,
) -> Result<f64, RecoveryError> {
    let p_keys: BTreeSet<_> = restored.keys().collect();
    let q_keys: BTreeSet<_> = ground_truth.keys().collect();
    if p_keys != q_keys {
        return Err(RecoveryError::UniverseMismatch {
            only_in_p: p_keys.difference(&q_keys).count(),
            only_in_q: q_keys.difference(&p_keys).count(),
        });
    }
    if restored.is_empty() {
        return Ok(1.0);
    }
    let exact = restored
        .iter()
        .filter(|(rid, set)| ground_truth.get(*rid) == Some(set))
        .count();
    Ok(exact as f64 / restored.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::WorkerRef;
    use crate::state::db::{apply_db_op, snapshot_db};
    use crate::state::files::Classification;
    use crate::state::incremental_backup;
    use crate::trace::ThreadId;

    fn op(ts: Ns, stmt: &str) -> DbOperation {
        DbOperation {
            ts,
            statement: stmt.to_string(),
            worker: WorkerRef::Unlabeled,
            source_anchor: None,
            reassembled: false,
        }
    }

    fn state_after(ops: &[DbOperation]) -> DbState {
        let mut s = DbState::default();
        for o in ops {
            let (next, _) = apply_db_op(s, o).unwrap();
            s = next;
        }
        s
    }

    #[test]
    fn no_malicious_ops_is_identity_recovery() {
        let ops: Vec<_> = (1..=10)
            .map(|i| op(i * 10, &format!("INS t k{i} {{\"v\":{i}}}")))
            .collect();
        let snap = snapshot_db(&state_after(&ops[..5]), 55);
        let plan = plan_db_recovery(&[], &[snap], &ops).unwrap();
        assert_eq!(plan.replay.len(), 5);
        assert_eq!(plan.filtered, 0);
        let result = execute_db_recovery(&plan).unwrap();
        assert_eq!(result.state, state_after(&ops));
    }

    #[test]
    fn case_study_arithmetic_filters_two_of_5398() {
        // 5398 writes after the baseline, 2 malicious: replay has 5396.
        let mut full = Vec::with_capacity(5398);
        for i in 0..5398u64 {
            full.push(op(100 + i, &format!("INS t k{i} {{}}")));
        }
        let malicious = vec![full[1000].clone(), full[2000].clone()];
        let snap = snapshot_db(&DbState::default(), 50);
        let plan = plan_db_recovery(&malicious, &[snap], &full).unwrap();
        assert_eq!(plan.replay.len(), 5396);
        assert_eq!(plan.filtered, 2);
    }

    #[test]
    fn recovered_state_matches_benign_only_oracle() {
        let full: Vec<_> = (1..=20)
            .map(|i| {
                if i % 2 == 0 {
                    op(i * 10, &format!("INS items k{i} {{\"v\":{i}}}"))
                } else {
                    op(i * 10, &format!("INS users u{i} {{\"n\":{i}}}"))
                }
            })
            .collect();
        let malicious = vec![full[7].clone(), full[12].clone()];
        let baseline_state = state_after(&full[..3]);
        let snapshots = vec![snapshot_db(&DbState::default(), 1), snapshot_db(&baseline_state, 35)];
        let plan = plan_db_recovery(&malicious, &snapshots, &full).unwrap();
        assert_eq!(plan.baseline.ts, 35);
        let result = execute_db_recovery(&plan).unwrap();

        // Oracle: apply all benign ops in order from empty.
        let benign: Vec<_> = full
            .iter()
            .filter(|o| !malicious.iter().any(|m| matches_malicious(o, m)))
            .cloned()
            .collect();
        assert_eq!(result.state, state_after(&benign));
    }

    #[test]
    fn attack_predating_all_snapshots_has_no_clean_snapshot() {
        let full = vec![op(10, "INS t k {}")];
        let snap = snapshot_db(&DbState::default(), 50);
        let err = plan_db_recovery(&full, &[snap], &full).unwrap_err();
        assert!(matches!(err, RecoveryError::NoCleanSnapshot { .. }));
    }

    #[test]
    fn filter_is_monotone_in_malicious_set() {
        let full: Vec<_> = (1..=30).map(|i| op(i * 10, &format!("INS t k{i} {{}}"))).collect();
        let snap = snapshot_db(&DbState::default(), 1);
        let small = vec![full[10].clone()];
        let large = vec![full[10].clone(), full[20].clone(), full[25].clone()];
        let plan_small = plan_db_recovery(&small, std::slice::from_ref(&snap), &full).unwrap();
        let plan_large = plan_db_recovery(&large, &[snap], &full).unwrap();
        let small_set: BTreeSet<_> = plan_small.replay.iter().map(OpKey::from_db).collect();
        let large_set: BTreeSet<_> = plan_large.replay.iter().map(OpKey::from_db).collect();
        assert!(large_set.is_subset(&small_set));
    }

    #[test]
    fn recovery_is_idempotent() {
        let full: Vec<_> = (1..=10).map(|i| op(i * 10, &format!("INS t k{i} {{}}"))).collect();
        let snap = snapshot_db(&DbState::default(), 1);
        let malicious = vec![full[4].clone()];
        let plan = plan_db_recovery(&malicious, std::slice::from_ref(&snap), &full).unwrap();
        let once = execute_db_recovery(&plan).unwrap().state;
        let plan2 = plan_db_recovery(&malicious, &[snap], &full).unwrap();
        let twice = execute_db_recovery(&plan2).unwrap().state;
        assert_eq!(once.state_hash(), twice.state_hash());
    }

    fn data_tree() -> FileTree {
        let classification = Classification::new(
            [
                ("/data".to_string(), DirClass::Data),
                ("/app".to_string(), DirClass::SystemApp),
                ("/tmp".to_string(), DirClass::SystemApp),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
        FileTree::new("/", classification)
    }

    fn wrec(seq: u64, ts: Ns, path: &str, offset: u64, data: &[u8]) -> WriteLogRecord {
        WriteLogRecord {
            seq,
            ts,
            pid: 1,
            tid: 5,
            path: path.to_string(),
            offset,
            data: data.to_vec(),
        }
    }

    fn mal_write(ts: Ns, path: &str, offset: u64, len: u64) -> FileOperation {
        FileOperation {
            path: path.to_string(),
            kind: FileOpKind::Write,
            ts,
            actor: ThreadId::new(1, 5),
            payload: Some(crate::provenance::PayloadRef {
                offset,
                len,
                host: "web".into(),
                seq: 0,
            }),
            rename_to: None,
        }
    }

    #[test]
    fn webshell_with_no_baseline_presence_is_deleted() {
        let baseline = data_tree();
        let mut tree = baseline.clone();
        tree.write_at("/tmp/Webshell", 0, b"<?php evil ?>");
        let chain = incremental_backup(BackupChain::default(), &baseline, 1).unwrap();
        let malicious = vec![mal_write(100, "/tmp/Webshell", 0, 13)];
        let actions =
            plan_fs_recovery(&malicious, &tree, &chain, &[], &FsPlanConfig::default()).unwrap();
        assert_eq!(actions.len(), 1);
        assert!(matches!(&actions[0], FsAction::BaselineRestore { path } if path == "/tmp/Webshell"));
        let (recovered, _) = execute_fs_recovery(
            &actions,
            &tree,
            &chain,
            &baseline,
            &mut ScriptedDecisions::default(),
        )
        .unwrap();
        assert_eq!(recovered.content("/tmp/Webshell"), None);
    }

    #[test]
    fn interleaved_data_file_recovers_to_benign_only_oracle() {
        let mut tree = data_tree();
        // Benign writes, then a backup, then interleaved benign+malicious.
        tree.write_at("/data/log.txt", 0, b"aaaa");
        let chain = incremental_backup(BackupChain::default(), &tree, 50).unwrap();
        let writes = [
            (1u64, 60, 4u64, b"bbbb" as &[u8], false),
            (2, 70, 8, b"EVIL", true),
            (3, 80, 12, b"cccc", false),
        ];
        let mut write_log = Vec::new();
        let mut malicious = Vec::new();
        for (seq, ts, offset, data, is_mal) in writes {
            tree.write_at("/data/log.txt", offset, data);
            write_log.push(wrec(seq, ts, "/data/log.txt", offset, data));
            if is_mal {
                malicious.push(mal_write(ts, "/data/log.txt", offset, data.len() as u64));
            }
        }
        let actions =
            plan_fs_recovery(&malicious, &tree, &chain, &write_log, &FsPlanConfig::default())
                .unwrap();
        let baseline = data_tree();
        let (recovered, _) = execute_fs_recovery(
            &actions,
            &tree,
            &chain,
            &baseline,
            &mut ScriptedDecisions::default(),
        )
        .unwrap();
        // Oracle: base version plus benign writes only (gap zero-filled).
        let mut oracle = data_tree();
        oracle.write_at("/data/log.txt", 0, b"aaaa");
        oracle.write_at("/data/log.txt", 4, b"bbbb");
        oracle.write_at("/data/log.txt", 12, b"cccc");
        assert_eq!(
            recovered.content("/data/log.txt"),
            oracle.content("/data/log.txt")
        );
    }

    #[test]
    fn system_path_write_gets_baseline_restore() {
        let mut baseline = data_tree();
        baseline.write_at("/app/config.php", 0, b"clean-config");
        let mut tree = baseline.clone();
        tree.write_at("/app/config.php", 0, b"EVIL!!-config");
        let chain = incremental_backup(BackupChain::default(), &baseline, 1).unwrap();
        let malicious = vec![mal_write(100, "/app/config.php", 0, 13)];
        let actions =
            plan_fs_recovery(&malicious, &tree, &chain, &[], &FsPlanConfig::default()).unwrap();
        assert!(matches!(&actions[0], FsAction::BaselineRestore { .. }));
        let (recovered, _) = execute_fs_recovery(
            &actions,
            &tree,
            &chain,
            &baseline,
            &mut ScriptedDecisions::default(),
        )
        .unwrap();
        assert_eq!(recovered.content("/app/config.php"), Some(&b"clean-config"[..]));
    }

    #[test]
    fn structured_files_go_interactive_and_choices_behave() {
        let mut tree = data_tree();
        tree.write_at("/data/index.db", 0, b"base");
        let chain = incremental_backup(BackupChain::default(), &tree, 50).unwrap();
        let mut write_log = Vec::new();
        tree.write_at("/data/index.db", 4, b"good");
        write_log.push(wrec(1, 60, "/data/index.db", 4, b"good"));
        tree.write_at("/data/index.db", 8, b"EVIL");
        write_log.push(wrec(2, 70, "/data/index.db", 8, b"EVIL"));
        let malicious = vec![mal_write(70, "/data/index.db", 8, 4)];
        let actions =
            plan_fs_recovery(&malicious, &tree, &chain, &write_log, &FsPlanConfig::default())
                .unwrap();
        assert!(matches!(&actions[0], FsAction::Interactive { history, .. } if history.len() == 2));

        let baseline = data_tree();
        let run = |choice: InteractiveChoice| {
            let mut provider = ScriptedDecisions {
                decisions: [("/data/index.db".to_string(), choice)].into_iter().collect(),
            };
            execute_fs_recovery(&actions, &tree, &chain, &baseline, &mut provider)
                .unwrap()
                .0
        };
        assert_eq!(
            run(InteractiveChoice::FullRollback).content("/data/index.db"),
            Some(&b"base"[..])
        );
        assert_eq!(
            run(InteractiveChoice::SelectiveReplay).content("/data/index.db"),
            Some(&b"basegood"[..])
        );
        assert_eq!(
            run(InteractiveChoice::Skip).content("/data/index.db"),
            Some(&b"basegoodEVIL"[..])
        );
    }

    #[test]
    fn empty_plan_leaves_tree_unchanged() {
        let mut tree = data_tree();
        tree.write_at("/data/a", 0, b"content");
        let (recovered, choices) = execute_fs_recovery(
            &[],
            &tree,
            &BackupChain::default(),
            &data_tree(),
            &mut ScriptedDecisions::default(),
        )
        .unwrap();
        assert_eq!(recovered, tree);
        assert!(choices.is_empty());
    }

    #[test]
    fn unclassified_path_aborts_planning() {
        let tree = data_tree();
        let chain = incremental_backup(BackupChain::default(), &tree, 1).unwrap();
        let malicious = vec![mal_write(50, "/var/spool/x", 0, 1)];
        let err = plan_fs_recovery(&malicious, &tree, &chain, &[], &FsPlanConfig::default())
            .unwrap_err();
        assert!(matches!(err, RecoveryError::Classification(_)));
    }

    #[test]
    fn no_backup_before_attack_degrades_to_interactive() {
        let mut tree = data_tree();
        tree.write_at("/data/fresh.txt", 0, b"created-then-tampered");
        // The only backup postdates the malicious write.
        let chain = incremental_backup(BackupChain::default(), &tree, 100).unwrap();
        let malicious = vec![mal_write(70, "/data/fresh.txt", 0, 1)];
        let actions =
            plan_fs_recovery(&malicious, &tree, &chain, &[], &FsPlanConfig::default()).unwrap();
        assert!(
            matches!(&actions[0], FsAction::Interactive { base_manifest_ts: None, .. }),
            "{actions:?}"
        );
    }

    #[test]
    fn provider_abort_propagates() {
        let mut tree = data_tree();
        tree.write_at("/data/index.db", 0, b"x");
        let chain = incremental_backup(BackupChain::default(), &tree, 50).unwrap();
        let malicious = vec![mal_write(70, "/data/index.db", 0, 1)];
        let actions =
            plan_fs_recovery(&malicious, &tree, &chain, &[], &FsPlanConfig::default()).unwrap();
        let baseline = data_tree();
        let err = execute_fs_recovery(
            &actions,
            &tree,
            &chain,
            &baseline,
            &mut ScriptedDecisions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, RecoveryError::ProviderAbort { .. }));
    }

    #[test]
    fn accuracy_counts_exact_set_matches() {
        let mut p = BTreeMap::new();
        let mut q = BTreeMap::new();
        for i in 0..200 {
            let rid = format!("r{i:04}");
            let key = OpKey::Db {
                ts: i,
                statement: format!("INS t k{i} {{}}"),
            };
            p.insert(rid.clone(), [key.clone()].into_iter().collect::<BTreeSet<_>>());
            q.insert(rid, [key].into_iter().collect::<BTreeSet<_>>());
        }
        assert_eq!(compute_recovery_accuracy(&p, &q).unwrap(), 1.0);
        // One mismatch out of 200.
        p.get_mut("r0007").unwrap().clear();
        let acc = compute_recovery_accuracy(&p, &q).unwrap();
        assert!((acc - 0.995).abs() < 1e-12);
        // Universe mismatch.
        p.remove("r0001");
        assert!(matches!(
            compute_recovery_accuracy(&p, &q),
            Err(RecoveryError::UniverseMismatch { .. })
        ));
    }
}
