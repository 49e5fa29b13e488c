//! Composed analysis pipeline: partition → provenance → anchors → database
//! operation extraction, for every request in a trace set.
//!
//! The output bundle is the handoff between analysis and recovery: the
//! operator (or an IDS) names malicious request ids, `analyze` produces the
//! bundle on disk, and `recover` consumes it after review. Bundle
//! serialization is canonical JSON and byte-stable across runs; stage
//! timings are deliberately excluded from serialization so identical inputs
//! produce identical bytes.

use crate::attribution::{
    extract_anchors, extract_ops_applog, extract_ops_syscall, map_worker, Anchor, AppLogEntry,
    AttributionError, DbOperation,
};
use crate::partition::{partition, PartitionError, RequestUnit, ServerModel};
use crate::provenance::{
    build_graph, collect_file_ops, detect_external, ExternalInteraction, FileOperation,
    ProvenanceGraph,
};
use crate::recovery::RequestOps;
use crate::sim::DbLogMode;
use crate::trace::{merge_logs, resolve_fd_tuples, EventLog, Ns, RequestId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("partition stage: {0}")]
    Partition(#[from] PartitionError),
    #[error("attribution stage: {0}")]
    Attribution(#[from] AttributionError),
}

/// Deployment facts the pipeline needs. These describe the monitored
/// system, not ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub model: ServerModel,
    pub db_endpoints: Vec<String>,
    pub stmt_log_path: String,
    pub db_log_mode: DbLogMode,
    #[serde(default)]
    pub clock_skew_ns: Ns,
}

impl AnalysisConfig {
    pub fn endpoint_set(&self) -> BTreeSet<(IpAddr, u16)> {
        self.db_endpoints
            .iter()
            .filter_map(|s| {
                let (ip, port) = s.rsplit_once(':')?;
                Some((ip.parse().ok()?, port.parse().ok()?))
            })
            .collect()
    }
}

/// Everything the pipeline learned about one request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestAnalysis {
    pub begin_ts: Ns,
    pub end_ts: Ns,
    pub unclosed: bool,
    pub syscall_count: usize,
    pub anchors: Vec<Anchor>,
    pub db_ops: Vec<DbOperation>,
    pub file_ops: Vec<FileOperation>,
    pub external: Vec<ExternalInteraction>,
}

/// Advisory for one malicious request's outbound traffic to non-database
/// services; local recovery cannot revert remote effects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NotificationReport {
    pub request_id: RequestId,
    pub interactions: Vec<ExternalInteraction>,
    pub advisory: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalysisDiagnostics {
    pub unknown_fd_count: usize,
    pub partition_notes: Vec<String>,
    pub anchor_failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub config: AnalysisConfig,
    pub requests: BTreeMap<RequestId, RequestAnalysis>,
    pub malicious_ids: BTreeSet<RequestId>,
    pub background_syscalls: usize,
    pub notifications: Vec<NotificationReport>,
    pub diagnostics: AnalysisDiagnostics,
    /// Wall-clock stage timings; not serialized, so bundles stay
    /// byte-stable across runs.
    #[serde(skip)]
    pub timings_ms: BTreeMap<String, u64>,
}

impl AnalysisBundle {
    /// Per-request operations in the shape recovery accounting wants.
    pub fn request_ops(&self) -> BTreeMap<RequestId, RequestOps> {
        self.requests
            .iter()
            .map(|(rid, ra)| {
                (
                    rid.clone(),
                    RequestOps {
                        db_ops: ra.db_ops.clone(),
                        file_ops: ra.file_ops.clone(),
                    },
                )
            })
            .collect()
    }

    /// Union of the malicious requests' database operations, in ts order.
    pub fn malicious_db_ops(&self) -> Vec<DbOperation> {
        let mut ops: Vec<DbOperation> = self
            .malicious_ids
            .iter()
            .filter_map(|rid| self.requests.get(rid))
            .flat_map(|ra| ra.db_ops.iter().cloned())
            .collect();
        ops.sort_by(|a, b| (a.ts, &a.statement).cmp(&(b.ts, &b.statement)));
        ops
    }

    /// Union of the malicious requests' file operations, in ts order.
    pub fn malicious_file_ops(&self) -> Vec<FileOperation> {
        let mut ops: Vec<FileOperation> = self
            .malicious_ids
            .iter()
            .filter_map(|rid| self.requests.get(rid))
            .flat_map(|ra| ra.file_ops.iter().cloned())
            .collect();
        ops.sort_by(|a, b| (a.ts, &a.path).cmp(&(b.ts, &b.path)));
        ops
    }
}

/// Extract one request's database operations through the configured log
/// path. The syscall route falls back to the application log on a worker
/// mapping failure (capture gap), when client metadata is available there.
fn extract_db_ops(
    unit_anchors: &[Anchor],
    db_log: &EventLog,
    app_log: &[AppLogEntry],
    config: &AnalysisConfig,
    diagnostics: &mut AnalysisDiagnostics,
) -> Vec<DbOperation> {
    let mut ops = Vec::new();
    for anchor in unit_anchors {
        match config.db_log_mode {
            DbLogMode::ApplogWithClient => {
                ops.extend(extract_ops_applog(app_log, anchor));
            }
            DbLogMode::SyscallStatementLog => match map_worker(db_log, anchor.tuple) {
                Ok(worker) => {
                    let mut extracted = extract_ops_syscall(
                        db_log,
                        worker,
                        anchor.window,
                        &config.stmt_log_path,
                    );
                    for op in &mut extracted {
                        op.source_anchor = Some(*anchor);
                    }
                    ops.extend(extracted);
                }
                Err(err) => {
                    diagnostics.anchor_failures.push(err.to_string());
                    ops.extend(extract_ops_applog(app_log, anchor));
                }
            },
        }
    }
    ops.sort_by(|a, b| (a.ts, &a.statement).cmp(&(b.ts, &b.statement)));
    ops
}

/// Run the full analysis pipeline over raw parsed logs.
pub fn run_analysis(
    web: &EventLog,
    db: &EventLog,
    app_log: &[AppLogEntry],
    config: &AnalysisConfig,
    malicious_ids: &BTreeSet<RequestId>,
) -> Result<AnalysisBundle, AnalysisError> {
    let mut diagnostics = AnalysisDiagnostics::default();
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let web_res = resolve_fd_tuples(web);
    let db_res = resolve_fd_tuples(db);
    diagnostics.unknown_fd_count = web_res.unknown_fds.len() + db_res.unknown_fds.len();
    timings.insert("resolve_fds".to_string(), t.elapsed().as_millis() as u64);

    let t = Instant::now();
    let parts = partition(&web_res.log, config.model)?;
    diagnostics.partition_notes = parts
        .diagnostics
        .iter()
        .map(|d| format!("{d:?}"))
        .collect();
    timings.insert("partition".to_string(), t.elapsed().as_millis() as u64);

    let t = Instant::now();
    let global = merge_logs(vec![web_res.log.clone(), db_res.log.clone()]);
    timings.insert("merge".to_string(), t.elapsed().as_millis() as u64);

    let endpoints = config.endpoint_set();
    let t = Instant::now();
    let mut requests = BTreeMap::new();
    for (rid, unit) in &parts.units {
        let graph = build_graph(unit, &global);
        let file_ops = collect_file_ops(&graph);
        let external = detect_external(&graph, &endpoints);
        let anchors = extract_anchors(unit, &endpoints, config.clock_skew_ns);
        let db_ops = extract_db_ops(&anchors, &db_res.log, app_log, config, &mut diagnostics);
        requests.insert(
            rid.clone(),
            RequestAnalysis {
                begin_ts: unit.begin_ts,
                end_ts: unit.end_ts,
                unclosed: unit.unclosed,
                syscall_count: unit.events.len(),
                anchors,
                db_ops,
                file_ops,
                external,
            },
        );
    }
    timings.insert("attribution".to_string(), t.elapsed().as_millis() as u64);

    let notifications = malicious_ids
        .iter()
        .filter_map(|rid| {
            let ra = requests.get(rid)?;
            if ra.external.is_empty() {
                return None;
            }
            Some(NotificationReport {
                request_id: rid.clone(),
                interactions: ra.external.clone(),
                advisory: format!(
                    "request {rid} contacted {} external service endpoint(s); remote effects \
                     cannot be reverted locally and the destinations should be notified",
                    ra.external.len()
                ),
            })
        })
        .collect();

    Ok(AnalysisBundle {
        config: config.clone(),
        requests,
        malicious_ids: malicious_ids.clone(),
        background_syscalls: parts.background.events.len(),
        notifications,
        diagnostics,
        timings_ms: timings,
    })
}

/// Build the provenance graph for a single request (the `trace`
/// subcommand's workhorse).
pub fn graph_for_request(
    web: &EventLog,
    db: &EventLog,
    model: ServerModel,
    request_id: &str,
) -> Result<(ProvenanceGraph, RequestUnit), AnalysisError> {
    let web_res = resolve_fd_tuples(web);
    let db_res = resolve_fd_tuples(db);
    let parts = partition(&web_res.log, model)?;
    let unit = crate::partition::unit_for(&parts, request_id)?.clone();
    let global = merge_logs(vec![web_res.log, db_res.log]);
    Ok((build_graph(&unit, &global), unit))
}
