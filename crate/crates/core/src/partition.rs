//! Request partitioning: splits an interleaved web-host log into
//! per-request syscall sequences using delimiter records.
//!
//! Two server concurrency models are supported. With a dedicated thread per
//! request, delimiters mark where one request ends and the next begins
//! inside each `(pid, tid)` stream. With coroutines, requests interleave on
//! one thread and ownership toggles at every `begin`/`switch_in` (acquire)
//! and `end`/`switch_out` (release). Syscalls outside any owned interval are
//! collected into a reserved `_background` unit rather than dropped;
//! recovery must never silently lose writes.

use crate::trace::{
    Event, EventLog, Marker, Ns, Payload, RequestId, ThreadId, BACKGROUND_REQUEST_ID,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Web server concurrency model, which decides delimiter semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerModel {
    ThreadPerRequest,
    Coroutine,
}

/// A `(pid, tid)` interval during which a request owned the thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerSegment {
    pub thread: ThreadId,
    pub from_ts: Ns,
    pub to_ts: Ns,
}

/// The ordered syscall subsequence attributed to one request.
#[derive(Debug, Clone, Serialize)]
pub struct RequestUnit {
    pub request_id: RequestId,
    /// Member syscalls, a subsequence of the source log (delimiters excluded).
    pub events: Vec<Event>,
    pub begin_ts: Ns,
    pub end_ts: Ns,
    pub segments: Vec<OwnerSegment>,
    /// True when the log ended before the request's `end` delimiter.
    pub unclosed: bool,
}

impl RequestUnit {
    fn new(request_id: RequestId, begin_ts: Ns) -> Self {
        RequestUnit {
            request_id,
            events: Vec::new(),
            begin_ts,
            end_ts: begin_ts,
            segments: Vec::new(),
            unclosed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PartitionDiagnostic {
    /// A begin without a matching end; the unit was closed at log end.
    UnclosedRequest(RequestId),
}

#[derive(Debug, Error)]
pub enum PartitionError {
    /// Delimiter protocol violation: a switch or end with no live request,
    /// a switch_in for a request that never began, or overlapping ownership
    /// on one thread. Correct instrumentation cannot emit these, so we fail
    /// loudly instead of guessing.
    #[error("delimiter protocol violation for request {request_id:?} at host {host} seq {seq}: {reason}")]
    DanglingSwitch {
        request_id: RequestId,
        host: String,
        seq: u64,
        reason: String,
    },
    #[error("unknown request id {0:?}")]
    UnknownRequest(RequestId),
}

/// Result of partitioning: per-request units plus the background unit.
#[derive(Debug)]
pub struct PartitionResult {
    pub units: BTreeMap<RequestId, RequestUnit>,
    pub background: RequestUnit,
    pub diagnostics: Vec<PartitionDiagnostic>,
}

impl PartitionResult {
    /// Total member syscalls across all units including background.
    pub fn total_syscalls(&self) -> usize {
        self.units.values().map(|u| u.events.len()).sum::<usize>() + self.background.events.len()
    }
}

/// Look up one request's unit.
pub fn unit_for<'a>(
    result: &'a PartitionResult,
    request_id: &str,
) -> Result<&'a RequestUnit, PartitionError> {
    result
        .units
        .get(request_id)
        .ok_or_else(|| PartitionError::UnknownRequest(request_id.to_string()))
}

/// Per-thread walk state.
struct ThreadState {
    owner: Option<RequestId>,
    segment_start: Ns,
}

/// Partition a web-host log into request units.
pub fn partition(log: &EventLog, model: ServerModel) -> Result<PartitionResult, PartitionError> {
    let mut units: BTreeMap<RequestId, RequestUnit> = BTreeMap::new();
    let mut background = RequestUnit::new(BACKGROUND_REQUEST_ID.to_string(), 0);
    let mut threads: BTreeMap<ThreadId, ThreadState> = BTreeMap::new();
    // Requests that have seen `begin` (switch_in is only legal afterwards).
    let mut begun: BTreeMap<RequestId, bool> = BTreeMap::new(); // value: ended
    let mut diagnostics = Vec::new();

    let dangling = |ev: &Event, rid: &str, reason: &str| PartitionError::DanglingSwitch {
        request_id: rid.to_string(),
        host: ev.host.clone(),
        seq: ev.seq,
        reason: reason.to_string(),
    };

    let close_segment =
        |units: &mut BTreeMap<RequestId, RequestUnit>, thread: ThreadId, state: &mut ThreadState, to_ts: Ns| {
            if let Some(rid) = state.owner.take() {
                let unit = units.get_mut(&rid).expect("owner unit exists");
                unit.segments.push(OwnerSegment {
                    thread,
                    from_ts: state.segment_start,
                    to_ts,
                });
                unit.end_ts = unit.end_ts.max(to_ts);
            }
        };

    for ev in log.events() {
        let thread = ev.thread();
        match &ev.payload {
            Payload::Delimiter(d) => {
                let rid = d.request_id.clone();
                let state = threads.entry(thread).or_insert(ThreadState {
                    owner: None,
                    segment_start: ev.ts,
                });
                match (model, d.marker) {
                    (_, Marker::Begin) => {
                        match model {
                            ServerModel::ThreadPerRequest => {
                                // A begin with no prior end closes the
                                // previous request at this boundary.
                                if let Some(prev) = state.owner.clone() {
                                    let last_ts = units
                                        .get(&prev)
                                        .map(|u| {
                                            u.events.last().map(|e| e.ts).unwrap_or(u.begin_ts)
                                        })
                                        .unwrap_or(ev.ts);
                                    close_segment(&mut units, thread, state, last_ts);
                                }
                            }
                            ServerModel::Coroutine => {
                                if let Some(prev) = &state.owner {
                                    return Err(dangling(
                                        ev,
                                        &rid,
                                        &format!("begin while {prev:?} owns the thread"),
                                    ));
                                }
                            }
                        }
                        if begun.contains_key(&rid) {
                            return Err(dangling(ev, &rid, "duplicate begin"));
                        }
                        begun.insert(rid.clone(), false);
                        units.insert(rid.clone(), RequestUnit::new(rid.clone(), ev.ts));
                        state.owner = Some(rid);
                        state.segment_start = ev.ts;
                    }
                    (_, Marker::End) => {
                        if state.owner.as_deref() != Some(rid.as_str()) {
                            return Err(dangling(ev, &rid, "end without ownership"));
                        }
                        close_segment(&mut units, thread, state, ev.ts);
                        units.get_mut(&rid).expect("unit exists").end_ts = ev.ts;
                        begun.insert(rid.clone(), true);
                    }
                    (ServerModel::ThreadPerRequest, Marker::SwitchIn | Marker::SwitchOut) => {
                        return Err(dangling(
                            ev,
                            &rid,
                            "context-switch delimiter under thread-per-request model",
                        ));
                    }
                    (ServerModel::Coroutine, Marker::SwitchOut) => {
                        if state.owner.as_deref() != Some(rid.as_str()) {
                            return Err(dangling(ev, &rid, "switch_out without ownership"));
                        }
                        close_segment(&mut units, thread, state, ev.ts);
                    }
                    (ServerModel::Coroutine, Marker::SwitchIn) => {
                        match begun.get(&rid) {
                            None => return Err(dangling(ev, &rid, "switch_in with no prior begin")),
                            Some(true) => {
                                return Err(dangling(ev, &rid, "switch_in after end"))
                            }
                            Some(false) => {}
                        }
                        if let Some(prev) = &state.owner {
                            return Err(dangling(
                                ev,
                                &rid,
                                &format!("switch_in while {prev:?} owns the thread"),
                            ));
                        }
                        state.owner = Some(rid);
                        state.segment_start = ev.ts;
                    }
                }
            }
            Payload::Syscall(_) => {
                let owner = threads.get(&thread).and_then(|s| s.owner.clone());
                match owner {
                    Some(rid) => {
                        let unit = units.get_mut(&rid).expect("owner unit exists");
                        unit.events.push(ev.clone());
                        unit.end_ts = unit.end_ts.max(ev.ts);
                    }
                    None => background.events.push(ev.clone()),
                }
            }
        }
    }

    // Close anything still open at log end and flag it.
    let log_end = log.end_ts().unwrap_or(0);
    for (thread, state) in threads.iter_mut() {
        if let Some(rid) = state.owner.clone() {
            close_segment(&mut units, *thread, state, log_end);
            diagnostics.push(PartitionDiagnostic::UnclosedRequest(rid));
        }
    }
    for (rid, ended) in &begun {
        if !ended {
            let unit = units.get_mut(rid).expect("begun unit exists");
            unit.unclosed = true;
            if !diagnostics
                .iter()
                .any(|d| matches!(d, PartitionDiagnostic::UnclosedRequest(r) if r == rid))
            {
                diagnostics.push(PartitionDiagnostic::UnclosedRequest(rid.clone()));
            }
        }
    }

    if let (Some(first), Some(last)) = (
        background.events.first().map(|e| e.ts),
        background.events.last().map(|e| e.ts),
    ) {
        background.begin_ts = first;
        background.end_ts = last;
    }

    Ok(PartitionResult {
        units,
        background,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::event::{Delimiter, Syscall};

    struct Builder {
        events: Vec<Event>,
        seq: u64,
    }

    impl Builder {
        fn new() -> Self {
            Builder {
                events: Vec::new(),
                seq: 0,
            }
        }

        fn delim(&mut self, tid: u32, rid: &str, marker: Marker) -> &mut Self {
            self.seq += 1;
            self.events.push(Event {
                seq: self.seq,
                ts: self.seq * 10,
                host: "web".into(),
                pid: 1,
                tid,
                payload: Payload::Delimiter(Delimiter {
                    request_id: rid.into(),
                    marker,
                }),
                sock: None,
            });
            self
        }

        fn sys(&mut self, tid: u32, path: &str) -> &mut Self {
            self.seq += 1;
            self.events.push(Event {
                seq: self.seq,
                ts: self.seq * 10,
                host: "web".into(),
                pid: 1,
                tid,
                payload: Payload::Syscall(Syscall::Openat {
                    fd: 9,
                    path: path.into(),
                }),
                sock: None,
            });
            self
        }

        fn log(&self) -> EventLog {
            EventLog::from_events(self.events.clone())
        }
    }

    fn paths(unit: &RequestUnit) -> Vec<String> {
        unit.events
            .iter()
            .filter_map(|e| match e.payload.as_syscall() {
                Some(Syscall::Openat { path, .. }) => Some(path.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn sequential_begin_end_collects_interior_syscalls() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(5, "/w1")
            .sys(5, "/w2")
            .delim(5, "r1", Marker::End);
        let res = partition(&b.log(), ServerModel::ThreadPerRequest).unwrap();
        let unit = unit_for(&res, "r1").unwrap();
        assert_eq!(paths(unit), vec!["/w1", "/w2"]);
        assert!(!unit.unclosed);
        assert!(res.background.events.is_empty());
    }

    #[test]
    fn begin_without_end_closes_at_next_begin() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(5, "/a")
            .delim(5, "r2", Marker::Begin)
            .sys(5, "/b")
            .delim(5, "r2", Marker::End);
        let res = partition(&b.log(), ServerModel::ThreadPerRequest).unwrap();
        assert_eq!(paths(unit_for(&res, "r1").unwrap()), vec!["/a"]);
        assert_eq!(paths(unit_for(&res, "r2").unwrap()), vec!["/b"]);
    }

    #[test]
    fn coroutine_interleaving_reattributes_by_switches() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(5, "/a")
            .delim(5, "r1", Marker::SwitchOut)
            .delim(5, "r2", Marker::Begin)
            .sys(5, "/b")
            .delim(5, "r2", Marker::SwitchOut)
            .delim(5, "r1", Marker::SwitchIn)
            .sys(5, "/c")
            .delim(5, "r1", Marker::End)
            .delim(5, "r2", Marker::SwitchIn)
            .sys(5, "/d")
            .delim(5, "r2", Marker::End);
        let res = partition(&b.log(), ServerModel::Coroutine).unwrap();
        assert_eq!(paths(unit_for(&res, "r1").unwrap()), vec!["/a", "/c"]);
        assert_eq!(paths(unit_for(&res, "r2").unwrap()), vec!["/b", "/d"]);
    }

    #[test]
    fn syscalls_outside_ownership_go_to_background() {
        let mut b = Builder::new();
        b.sys(5, "/pool")
            .delim(5, "r1", Marker::Begin)
            .sys(5, "/a")
            .delim(5, "r1", Marker::End)
            .sys(5, "/housekeeping");
        let res = partition(&b.log(), ServerModel::ThreadPerRequest).unwrap();
        assert_eq!(res.background.events.len(), 2);
    }

    #[test]
    fn switch_in_without_begin_is_dangling() {
        let mut b = Builder::new();
        b.delim(5, "r9", Marker::SwitchIn);
        let err = partition(&b.log(), ServerModel::Coroutine).unwrap_err();
        assert!(matches!(err, PartitionError::DanglingSwitch { request_id, .. } if request_id == "r9"));
    }

    #[test]
    fn coroutine_nested_begin_is_dangling() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin).delim(5, "r2", Marker::Begin);
        let err = partition(&b.log(), ServerModel::Coroutine).unwrap_err();
        assert!(matches!(err, PartitionError::DanglingSwitch { .. }));
    }

    #[test]
    fn unclosed_request_is_flagged_and_closed_at_log_end() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin).sys(5, "/a");
        let res = partition(&b.log(), ServerModel::ThreadPerRequest).unwrap();
        let unit = unit_for(&res, "r1").unwrap();
        assert!(unit.unclosed);
        assert_eq!(paths(unit), vec!["/a"]);
        assert!(res
            .diagnostics
            .iter()
            .any(|d| matches!(d, PartitionDiagnostic::UnclosedRequest(r) if r == "r1")));
    }

    #[test]
    fn unknown_request_id_errors() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin).delim(5, "r1", Marker::End);
        let res = partition(&b.log(), ServerModel::ThreadPerRequest).unwrap();
        assert!(matches!(
            unit_for(&res, "nope"),
            Err(PartitionError::UnknownRequest(_))
        ));
    }

    #[test]
    fn unit_events_preserve_log_order_and_bounds() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(5, "/a")
            .sys(5, "/b")
            .delim(5, "r1", Marker::End);
        let res = partition(&b.log(), ServerModel::ThreadPerRequest).unwrap();
        let unit = unit_for(&res, "r1").unwrap();
        let mut prev = (0, 0);
        for e in &unit.events {
            assert!(e.order_key() > prev);
            prev = e.order_key();
            assert!(unit.begin_ts <= e.ts && e.ts <= unit.end_ts);
        }
    }
}
