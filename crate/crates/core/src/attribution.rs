//! Database operation attribution via spatiotemporal anchors.
//!
//! A pooled connection is used by exactly one request at any instant, and a
//! worker-per-connection database dedicates one thread to each connection.
//! The pair (network 4-tuple, active time window) therefore bridges the web
//! and database hosts: every statement the mapped worker executes inside
//! the window belongs to the anchoring request.
//!
//! Windows are half-open `[t_start, t_end)`. A closed interval would risk
//! double attribution when a pooled connection is handed off within the
//! same nanosecond; half-open plus pool exclusivity resolves ties
//! deterministically.

use crate::partition::RequestUnit;
use crate::trace::{EventLog, NetworkTuple, Ns, Syscall, ThreadId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::net::IpAddr;
use thiserror::Error;

/// Half-open time window `[start, end)` in integer nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Ns,
    pub end: Ns,
}

impl TimeWindow {
    pub fn contains(&self, ts: Ns) -> bool {
        self.start <= ts && ts < self.end
    }

    /// Widen by a clock-skew allowance on both sides.
    pub fn widened(&self, skew: Ns) -> TimeWindow {
        TimeWindow {
            start: self.start.saturating_sub(skew),
            end: self.end.saturating_add(skew),
        }
    }
}

/// Spatiotemporal anchor: the connection tuple plus its active window
/// within one request's lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub tuple: NetworkTuple,
    pub window: TimeWindow,
}

/// Who executed a statement, in whichever log domain it was observed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WorkerRef {
    /// Database worker thread observed via the syscall path.
    DbThread { pid: u32, tid: u32 },
    /// Client endpoint recorded by the application log.
    Client { ip: IpAddr, port: u16 },
    /// Application log without client metadata.
    Unlabeled,
}

impl WorkerRef {
    /// Whether two refs can denote the same executor. Refs from different
    /// log domains (thread id vs client endpoint) and unlabeled refs are
    /// not comparable and never veto a match.
    pub fn compatible(&self, other: &WorkerRef) -> bool {
        match (self, other) {
            (WorkerRef::DbThread { .. }, WorkerRef::DbThread { .. })
            | (WorkerRef::Client { .. }, WorkerRef::Client { .. }) => self == other,
            _ => true,
        }
    }
}

impl fmt::Display for WorkerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkerRef::DbThread { pid, tid } => write!(f, "thread:{pid}/{tid}"),
            WorkerRef::Client { ip, port } => write!(f, "client:{ip}:{port}"),
            WorkerRef::Unlabeled => f.write_str("-"),
        }
    }
}

/// One extracted database statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbOperation {
    pub ts: Ns,
    pub statement: String,
    pub worker: WorkerRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_anchor: Option<Anchor>,
    /// True when the statement straddled the window end and was completed
    /// from the worker's next log write.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reassembled: bool,
}

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("no database worker found for connection {tuple}")]
    NoWorkerFound { tuple: NetworkTuple },
    #[error("application log line {line}: {reason}")]
    MalformedAppLog { line: usize, reason: String },
}

/// Extract one anchor per distinct tuple whose destination is a configured
/// database endpoint. The window spans the first through last syscall using
/// the tuple within the unit, half-open at the end, widened by `skew`.
pub fn extract_anchors(
    unit: &RequestUnit,
    db_endpoints: &BTreeSet<(IpAddr, u16)>,
    skew: Ns,
) -> Vec<Anchor> {
    let mut spans: BTreeMap<NetworkTuple, (Ns, Ns)> = BTreeMap::new();
    for ev in &unit.events {
        let Some(tuple) = ev.sock else { continue };
        if !db_endpoints.contains(&tuple.dst_endpoint()) {
            continue;
        }
        let span = spans.entry(tuple).or_insert((ev.ts, ev.ts));
        span.0 = span.0.min(ev.ts);
        span.1 = span.1.max(ev.ts);
    }
    spans
        .into_iter()
        .map(|(tuple, (first, last))| Anchor {
            tuple,
            window: TimeWindow {
                start: first,
                end: last + 1,
            }
            .widened(skew),
        })
        .collect()
}

/// Map a connection tuple to the database worker thread that accepted it.
/// Worker-per-connection servers keep this mapping stable for the
/// connection's lifetime.
pub fn map_worker(db_log: &EventLog, tuple: NetworkTuple) -> Result<ThreadId, AttributionError> {
    for ev in db_log.events() {
        if let Some(Syscall::Accept { tuple: t, .. }) = ev.payload.as_syscall() {
            if *t == tuple {
                return Ok(ev.thread());
            }
        }
    }
    // Capture gap tolerance: fall back to the first annotated data syscall
    // on the tuple.
    if let Some(indexes) = db_log.tuple_index().get(&tuple) {
        for &i in indexes {
            let ev = &db_log.events()[i];
            if ev.is_syscall() {
                return Ok(ev.thread());
            }
        }
    }
    Err(AttributionError::NoWorkerFound { tuple })
}

/// Extract the statements a worker thread logged to the statement file
/// within a window, via its write syscalls.
///
/// Statement boundary is the newline in the statement log. Statements may
/// span multiple writes; bytes are concatenated in (ts, seq) order and each
/// statement is stamped with the ts of the write carrying its first byte.
/// A line still open when the worker's pre-window write ended is skipped
/// (it belongs to a statement that started before the window); a partial
/// line at window end is completed from the worker's next write and
/// flagged.
pub fn extract_ops_syscall(
    db_log: &EventLog,
    worker: ThreadId,
    window: TimeWindow,
    statement_log_path: &str,
) -> Vec<DbOperation> {
    // All of this worker's statement-log writes, in log order.
    let writes: Vec<(Ns, &[u8])> = db_log
        .thread_events(worker)
        .filter_map(|ev| match ev.payload.as_syscall() {
            Some(Syscall::Write {
                path: Some(p),
                data,
                ..
            }) if p == statement_log_path => Some((ev.ts, data.as_slice())),
            _ => None,
        })
        .collect();

    // Does the last pre-window write leave a line open? If so the first
    // in-window bytes up to the first newline complete a pre-window
    // statement and are not ours.
    let mut open_line_from_before = false;
    for (ts, data) in &writes {
        if *ts >= window.start {
            break;
        }
        if !data.is_empty() {
            open_line_from_before = !data.ends_with(b"\n");
        }
    }

    let mut ops = Vec::new();
    let mut current: Vec<u8> = Vec::new();
    let mut current_start: Option<Ns> = None;
    let mut skipping_prefix = open_line_from_before;

    let flush =
        |ops: &mut Vec<DbOperation>, stmt: &[u8], ts: Ns, reassembled: bool, worker: ThreadId| {
            if stmt.is_empty() {
                return;
            }
            ops.push(DbOperation {
                ts,
                statement: String::from_utf8_lossy(stmt).into_owned(),
                worker: WorkerRef::DbThread {
                    pid: worker.pid,
                    tid: worker.tid,
                },
                source_anchor: None,
                reassembled,
            });
        };

    for (ts, data) in writes.iter().filter(|(ts, _)| window.contains(*ts)) {
        for &byte in *data {
            if skipping_prefix {
                if byte == b'\n' {
                    skipping_prefix = false;
                }
                continue;
            }
            if byte == b'\n' {
                let start = current_start.take().unwrap_or(*ts);
                flush(&mut ops, &current, start, false, worker);
                current.clear();
            } else {
                current_start.get_or_insert(*ts);
                current.push(byte);
            }
        }
    }

    // Partial line at window end: complete it from the worker's subsequent
    // writes and flag the reassembly.
    if !current.is_empty() {
        let start = current_start.take().expect("partial line has a start");
        'outer: for (ts, data) in &writes {
            if *ts < window.end {
                continue;
            }
            for &byte in *data {
                if byte == b'\n' {
                    break 'outer;
                }
                current.push(byte);
            }
        }
        flush(&mut ops, &current, start, true, worker);
    }

    ops
}

/// One structured application-log record: `<ts>\t<client or "-">\t<statement>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLogEntry {
    pub ts: Ns,
    pub client: Option<(IpAddr, u16)>,
    pub statement: String,
}

/// Parse the database application log format.
pub fn parse_app_log(text: &str) -> Result<Vec<AppLogEntry>, AttributionError> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut parts = line.splitn(3, '\t');
        let ts = parts
            .next()
            .and_then(|s| s.parse::<Ns>().ok())
            .ok_or_else(|| AttributionError::MalformedAppLog {
                line: line_no,
                reason: "bad timestamp".into(),
            })?;
        let client_field = parts.next().ok_or_else(|| AttributionError::MalformedAppLog {
            line: line_no,
            reason: "missing client field".into(),
        })?;
        let statement = parts
            .next()
            .ok_or_else(|| AttributionError::MalformedAppLog {
                line: line_no,
                reason: "missing statement field".into(),
            })?
            .to_string();
        if statement.is_empty() {
            return Err(AttributionError::MalformedAppLog {
                line: line_no,
                reason: "empty statement".into(),
            });
        }
        let client = if client_field == "-" {
            None
        } else {
            let (ip, port) = client_field.rsplit_once(':').ok_or_else(|| {
                AttributionError::MalformedAppLog {
                    line: line_no,
                    reason: "bad client endpoint".into(),
                }
            })?;
            Some((
                ip.parse().map_err(|_| AttributionError::MalformedAppLog {
                    line: line_no,
                    reason: "bad client ip".into(),
                })?,
                port.parse().map_err(|_| AttributionError::MalformedAppLog {
                    line: line_no,
                    reason: "bad client port".into(),
                })?,
            ))
        };
        entries.push(AppLogEntry {
            ts,
            client,
            statement,
        });
    }
    Ok(entries)
}

/// Serialize application-log entries back to the text format.
pub fn serialize_app_log(entries: &[AppLogEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let client = match e.client {
            Some((ip, port)) => format!("{ip}:{port}"),
            None => "-".to_string(),
        };
        out.push_str(&format!("{}\t{}\t{}\n", e.ts, client, e.statement));
    }
    out
}

/// Lift the whole application log into operations, the complete modification
/// history recovery replays from. Workers are client endpoints when the log
/// records them.
pub fn app_log_to_operations(entries: &[AppLogEntry]) -> Vec<DbOperation> {
    entries
        .iter()
        .map(|e| DbOperation {
            ts: e.ts,
            statement: e.statement.clone(),
            worker: match e.client {
                Some((ip, port)) => WorkerRef::Client { ip, port },
                None => WorkerRef::Unlabeled,
            },
            source_anchor: None,
            reassembled: false,
        })
        .collect()
}

/// Extract a request's statements directly from the application log: those
/// whose client matches the anchor's source endpoint and whose ts lies in
/// the anchor window.
pub fn extract_ops_applog(entries: &[AppLogEntry], anchor: &Anchor) -> Vec<DbOperation> {
    entries
        .iter()
        .filter(|e| {
            e.client == Some(anchor.tuple.src_endpoint()) && anchor.window.contains(e.ts)
        })
        .map(|e| DbOperation {
            ts: e.ts,
            statement: e.statement.clone(),
            worker: match e.client {
                Some((ip, port)) => WorkerRef::Client { ip, port },
                None => WorkerRef::Unlabeled,
            },
            source_anchor: Some(*anchor),
            reassembled: false,
        })
        .collect()
}
