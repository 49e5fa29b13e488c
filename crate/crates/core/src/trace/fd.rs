//! File-descriptor lifecycle tracking and socket tuple resolution.
//!
//! Capture tools record socket syscalls against raw fd numbers; analysis
//! needs the network tuple in force for `(pid, fd)` at each instant. This
//! module replays the fd lifecycle (socket → connect/accept → dup → close)
//! per process and annotates every socket read/write/sendto/recvfrom with
//! its tuple. Unknown fds are diagnostics, not errors: real capture loses
//! events, and parsing must stay loss-tolerant.

use super::event::{Event, NetworkTuple, Syscall};
use super::log::EventLog;
use serde::Serialize;
use std::collections::BTreeMap;

/// What a process fd currently refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FdEntry {
    /// Socket with no tuple bound yet (after `socket`, before connect/accept).
    UnboundSocket,
    /// Socket bound to a connection tuple.
    Socket(NetworkTuple),
    /// Regular file (from `openat`).
    File,
}

/// Diagnostic for a data syscall on an fd with no known lifecycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnknownFd {
    pub host: String,
    pub seq: u64,
    pub pid: u32,
    pub tid: u32,
    pub fd: u32,
}

/// Result of fd resolution: the annotated log plus capture-gap diagnostics.
#[derive(Debug)]
pub struct FdResolution {
    pub log: EventLog,
    pub unknown_fds: Vec<UnknownFd>,
}

/// Annotate socket data syscalls with the tuple in force for their fd.
///
/// Lifecycle is tracked per `(host, pid)`: threads of one process share the
/// fd table. Events already carrying a tuple inline (connect/accept) are
/// annotated directly and also update the table.
pub fn resolve_fd_tuples(log: &EventLog) -> FdResolution {
    let mut tables: BTreeMap<(String, u32), BTreeMap<u32, FdEntry>> = BTreeMap::new();
    let mut unknown_fds = Vec::new();
    let mut events: Vec<Event> = log.events().to_vec();

    for ev in events.iter_mut() {
        let Some(sc) = ev.payload.as_syscall() else {
            continue;
        };
        let table = tables.entry((ev.host.clone(), ev.pid)).or_default();
        match sc {
            Syscall::Socket { fd } => {
                table.insert(*fd, FdEntry::UnboundSocket);
            }
            Syscall::Connect { fd, tuple } | Syscall::Accept { fd, tuple } => {
                table.insert(*fd, FdEntry::Socket(*tuple));
                ev.sock = Some(*tuple);
            }
            Syscall::Openat { fd, path: _ } => {
                table.insert(*fd, FdEntry::File);
            }
            Syscall::Dup { fd, new_fd } => {
                if let Some(entry) = table.get(fd).copied() {
                    table.insert(*new_fd, entry);
                    if let FdEntry::Socket(t) = entry {
                        ev.sock = Some(t);
                    }
                } else {
                    unknown_fds.push(UnknownFd {
                        host: ev.host.clone(),
                        seq: ev.seq,
                        pid: ev.pid,
                        tid: ev.tid,
                        fd: *fd,
                    });
                }
            }
            Syscall::Close { fd } => {
                if let Some(FdEntry::Socket(t)) = table.remove(fd) {
                    ev.sock = Some(t);
                }
            }
            Syscall::Read { fd, path }
            | Syscall::Write { fd, path, .. } => {
                // Path-bearing reads/writes are file i/o regardless of table
                // state; the table only decides socket annotation.
                if path.is_some() {
                    continue;
                }
                match table.get(fd) {
                    Some(FdEntry::Socket(t)) => ev.sock = Some(*t),
                    Some(FdEntry::UnboundSocket) | Some(FdEntry::File) => {}
                    None => unknown_fds.push(UnknownFd {
                        host: ev.host.clone(),
                        seq: ev.seq,
                        pid: ev.pid,
                        tid: ev.tid,
                        fd: *fd,
                    }),
                }
            }
            Syscall::Sendto { fd, .. } | Syscall::Recvfrom { fd } => match table.get(fd) {
                Some(FdEntry::Socket(t)) => ev.sock = Some(*t),
                Some(FdEntry::UnboundSocket) | Some(FdEntry::File) => {}
                None => unknown_fds.push(UnknownFd {
                    host: ev.host.clone(),
                    seq: ev.seq,
                    pid: ev.pid,
                    tid: ev.tid,
                    fd: *fd,
                }),
            },
            _ => {}
        }
    }

    FdResolution {
        log: EventLog::from_events(events),
        unknown_fds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::event::{Payload, Syscall};

    fn tup(src_port: u16) -> NetworkTuple {
        NetworkTuple::new(
            "10.0.0.1".parse().unwrap(),
            src_port,
            "10.0.0.2".parse().unwrap(),
            5432,
        )
    }

    fn ev(seq: u64, sc: Syscall) -> Event {
        Event {
            seq,
            ts: seq,
            host: "web".into(),
            pid: 7,
            tid: 7,
            payload: Payload::Syscall(sc),
            sock: None,
        }
    }

    fn sock_of(log: &EventLog, seq: u64) -> Option<NetworkTuple> {
        log.events().iter().find(|e| e.seq == seq).unwrap().sock
    }

    #[test]
    fn connect_then_write_annotates_tuple() {
        let t = tup(40000);
        let log = EventLog::from_events(vec![
            ev(1, Syscall::Socket { fd: 7 }),
            ev(2, Syscall::Connect { fd: 7, tuple: t }),
            ev(
                3,
                Syscall::Write {
                    fd: 7,
                    path: None,
                    offset: None,
                    data: b"q".to_vec(),
                },
            ),
        ]);
        let res = resolve_fd_tuples(&log);
        assert_eq!(sock_of(&res.log, 3), Some(t));
        assert!(res.unknown_fds.is_empty());
    }

    #[test]
    fn dup_carries_tuple_across_close_of_original() {
        let t = tup(40001);
        let log = EventLog::from_events(vec![
            ev(1, Syscall::Socket { fd: 7 }),
            ev(2, Syscall::Connect { fd: 7, tuple: t }),
            ev(3, Syscall::Dup { fd: 7, new_fd: 9 }),
            ev(4, Syscall::Close { fd: 7 }),
            ev(
                5,
                Syscall::Write {
                    fd: 9,
                    path: None,
                    offset: None,
                    data: b"q".to_vec(),
                },
            ),
        ]);
        let res = resolve_fd_tuples(&log);
        assert_eq!(sock_of(&res.log, 5), Some(t));
        assert!(res.unknown_fds.is_empty());
    }

    #[test]
    fn write_on_never_opened_fd_is_one_unknown_fd_diagnostic() {
        let log = EventLog::from_events(vec![ev(
            1,
            Syscall::Write {
                fd: 3,
                path: None,
                offset: None,
                data: b"x".to_vec(),
            },
        )]);
        let res = resolve_fd_tuples(&log);
        assert_eq!(sock_of(&res.log, 1), None);
        assert_eq!(res.unknown_fds.len(), 1);
        assert_eq!(res.unknown_fds[0].fd, 3);
    }

    #[test]
    fn file_write_with_path_is_not_socket_annotated() {
        let t = tup(40002);
        let log = EventLog::from_events(vec![
            ev(1, Syscall::Socket { fd: 7 }),
            ev(2, Syscall::Connect { fd: 7, tuple: t }),
            ev(
                3,
                Syscall::Write {
                    fd: 7,
                    path: Some("/data/a".into()),
                    offset: Some(0),
                    data: b"x".to_vec(),
                },
            ),
        ]);
        let res = resolve_fd_tuples(&log);
        assert_eq!(sock_of(&res.log, 3), None);
    }

    #[test]
    fn tuple_index_is_populated_after_resolution() {
        let t = tup(40003);
        let log = EventLog::from_events(vec![
            ev(1, Syscall::Socket { fd: 7 }),
            ev(2, Syscall::Connect { fd: 7, tuple: t }),
            ev(3, Syscall::Sendto { fd: 7, data: b"hello".to_vec() }),
        ]);
        let res = resolve_fd_tuples(&log);
        assert_eq!(res.log.tuple_index().get(&t).map(|v| v.len()), Some(2));
    }
}
