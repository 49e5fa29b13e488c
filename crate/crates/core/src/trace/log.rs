//! Ordered event logs and deterministic multi-host merging.

use super::event::{Event, NetworkTuple, Ns, RequestId, ThreadId};
use std::collections::BTreeMap;

/// An immutable, totally ordered sequence of events with lookup indexes.
///
/// Events are ordered by `(ts, seq, host)`; within a single host file
/// `(ts, seq)` alone is total. All analysis operations treat logs as
/// immutable values, so they are safe to share across threads.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<Event>,
    by_thread: BTreeMap<ThreadId, Vec<usize>>,
    by_request: BTreeMap<RequestId, Vec<usize>>,
    by_tuple: BTreeMap<NetworkTuple, Vec<usize>>,
}

impl EventLog {
    /// Build a log from events, sorting into the canonical total order and
    /// constructing indexes.
    pub fn from_events(mut events: Vec<Event>) -> Self {
        events.sort_by(|a, b| a.merge_key().cmp(&b.merge_key()));
        let mut by_thread: BTreeMap<ThreadId, Vec<usize>> = BTreeMap::new();
        let mut by_request: BTreeMap<RequestId, Vec<usize>> = BTreeMap::new();
        let mut by_tuple: BTreeMap<NetworkTuple, Vec<usize>> = BTreeMap::new();
        for (i, ev) in events.iter().enumerate() {
            by_thread.entry(ev.thread()).or_default().push(i);
            if let Some(d) = ev.payload.as_delimiter() {
                by_request.entry(d.request_id.clone()).or_default().push(i);
            }
            if let Some(t) = ev.sock {
                by_tuple.entry(t).or_default().push(i);
            }
        }
        EventLog {
            events,
            by_thread,
            by_request,
            by_tuple,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Event indexes per (pid, tid), in log order.
    pub fn thread_index(&self) -> &BTreeMap<ThreadId, Vec<usize>> {
        &self.by_thread
    }

    /// Delimiter event indexes per request id.
    pub fn request_index(&self) -> &BTreeMap<RequestId, Vec<usize>> {
        &self.by_request
    }

    /// Indexes of tuple-annotated events (populated after fd resolution).
    pub fn tuple_index(&self) -> &BTreeMap<NetworkTuple, Vec<usize>> {
        &self.by_tuple
    }

    /// Timestamp of the last event, if any.
    pub fn end_ts(&self) -> Option<Ns> {
        self.events.last().map(|e| e.ts)
    }

    /// Events of one thread in log order.
    pub fn thread_events(&self, thread: ThreadId) -> impl Iterator<Item = &Event> {
        self.by_thread
            .get(&thread)
            .into_iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }
}

/// Merge per-host logs into one totally ordered log. Ties on `ts` are broken
/// by `seq`, then host label, so the result is independent of input grouping
/// and order.
pub fn merge_logs(logs: Vec<EventLog>) -> EventLog {
    let mut all = Vec::with_capacity(logs.iter().map(|l| l.len()).sum());
    for log in logs {
        all.extend(log.events);
    }
    EventLog::from_events(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::event::{Payload, Syscall};

    fn ev(seq: u64, ts: Ns, host: &str) -> Event {
        Event {
            seq,
            ts,
            host: host.to_string(),
            pid: 1,
            tid: 1,
            payload: Payload::Syscall(Syscall::Exit),
            sock: None,
        }
    }

    fn keys(log: &EventLog) -> Vec<(Ns, u64, String)> {
        log.events()
            .iter()
            .map(|e| (e.ts, e.seq, e.host.clone()))
            .collect()
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let l = EventLog::from_events(vec![ev(1, 10, "web"), ev(2, 20, "web")]);
        let merged = merge_logs(vec![l.clone(), EventLog::default()]);
        assert_eq!(keys(&merged), keys(&l));
    }

    #[test]
    fn merge_equals_full_sort_oracle() {
        // Oracle: concatenate everything and sort by the documented key.
        let a = EventLog::from_events(vec![ev(1, 10, "web"), ev(2, 30, "web")]);
        let b = EventLog::from_events(vec![ev(1, 20, "db"), ev(2, 25, "db")]);
        let mut oracle: Vec<_> = a
            .events()
            .iter()
            .chain(b.events().iter())
            .cloned()
            .collect();
        oracle.sort_by_key(|x| (x.ts, x.seq, x.host.clone()));
        let merged = merge_logs(vec![a, b]);
        assert_eq!(
            keys(&merged),
            oracle
                .iter()
                .map(|e| (e.ts, e.seq, e.host.clone()))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn equal_ts_orders_by_seq_then_host_label() {
        let a = EventLog::from_events(vec![ev(5, 10, "web")]);
        let b = EventLog::from_events(vec![ev(5, 10, "db")]);
        let merged = merge_logs(vec![a, b]);
        assert_eq!(merged.events()[0].host, "db");
        assert_eq!(merged.events()[1].host, "web");
    }

    #[test]
    fn merge_is_grouping_insensitive() {
        let a = EventLog::from_events(vec![ev(1, 10, "web")]);
        let b = EventLog::from_events(vec![ev(1, 10, "db")]);
        let c = EventLog::from_events(vec![ev(1, 5, "app")]);
        let one = merge_logs(vec![a.clone(), b.clone(), c.clone()]);
        let two = merge_logs(vec![merge_logs(vec![c, a]), b]);
        assert_eq!(keys(&one), keys(&two));
    }
}
