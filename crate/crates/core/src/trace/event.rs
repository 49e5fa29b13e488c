//! The canonical event model: one timestamped syscall or delimiter record.
//!
//! Events are the atom of all analysis. Ordering is always by the integer
//! pair `(ts, seq)` within one host file and `(ts, seq, host)` across hosts;
//! timestamps are integer nanoseconds and no floating point participates in
//! ordering anywhere.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::net::IpAddr;

/// Integer nanoseconds since epoch.
pub type Ns = u64;

/// A process/thread pair. On single-threaded processes `tid == pid`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ThreadId {
    pub pid: u32,
    pub tid: u32,
}

impl ThreadId {
    pub fn new(pid: u32, tid: u32) -> Self {
        ThreadId { pid, tid }
    }
}

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.pid, self.tid)
    }
}

/// TCP connection 4-tuple. Equality and ordering are field-wise, which makes
/// the tuple usable as a deterministic map key.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NetworkTuple {
    pub src_ip: IpAddr,
    pub src_port: u16,
    pub dst_ip: IpAddr,
    pub dst_port: u16,
}

impl NetworkTuple {
    pub fn new(src_ip: IpAddr, src_port: u16, dst_ip: IpAddr, dst_port: u16) -> Self {
        NetworkTuple {
            src_ip,
            src_port,
            dst_ip,
            dst_port,
        }
    }

    pub fn dst_endpoint(&self) -> (IpAddr, u16) {
        (self.dst_ip, self.dst_port)
    }

    pub fn src_endpoint(&self) -> (IpAddr, u16) {
        (self.src_ip, self.src_port)
    }
}

impl fmt::Display for NetworkTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}->{}:{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port
        )
    }
}

/// Request id carried by delimiter records. Opaque, non-empty.
pub type RequestId = String;

/// Reserved unit id for syscalls that fall outside every request interval.
pub const BACKGROUND_REQUEST_ID: &str = "_background";

/// Delimiter marker kinds injected by framework instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Begin,
    End,
    SwitchIn,
    SwitchOut,
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Marker::Begin => "begin",
            Marker::End => "end",
            Marker::SwitchIn => "switch_in",
            Marker::SwitchOut => "switch_out",
        };
        f.write_str(s)
    }
}

/// A delimiter record: request boundary or coroutine context switch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delimiter {
    pub request_id: RequestId,
    pub marker: Marker,
}

/// Typed syscall payload. Each variant carries exactly the arguments that
/// syscall needs; presence is validated at parse time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Syscall {
    Fork {
        child_pid: u32,
        child_tid: u32,
    },
    Clone {
        child_pid: u32,
        child_tid: u32,
    },
    Execve {
        path: String,
    },
    Exit,
    Socket {
        fd: u32,
    },
    Connect {
        fd: u32,
        tuple: NetworkTuple,
    },
    Accept {
        fd: u32,
        tuple: NetworkTuple,
    },
    Dup {
        fd: u32,
        new_fd: u32,
    },
    Close {
        fd: u32,
    },
    Openat {
        fd: u32,
        path: String,
    },
    Read {
        fd: u32,
        path: Option<String>,
    },
    Write {
        fd: u32,
        path: Option<String>,
        offset: Option<u64>,
        data: Vec<u8>,
    },
    Unlink {
        path: String,
    },
    Rename {
        old_path: String,
        new_path: String,
    },
    Sendto {
        fd: u32,
        data: Vec<u8>,
    },
    Recvfrom {
        fd: u32,
    },
}

impl Syscall {
    /// Wire name of the syscall.
    pub fn name(&self) -> &'static str {
        match self {
            Syscall::Fork { .. } => "fork",
            Syscall::Clone { .. } => "clone",
            Syscall::Execve { .. } => "execve",
            Syscall::Exit => "exit",
            Syscall::Socket { .. } => "socket",
            Syscall::Connect { .. } => "connect",
            Syscall::Accept { .. } => "accept",
            Syscall::Dup { .. } => "dup",
            Syscall::Close { .. } => "close",
            Syscall::Openat { .. } => "openat",
            Syscall::Read { .. } => "read",
            Syscall::Write { .. } => "write",
            Syscall::Unlink { .. } => "unlink",
            Syscall::Rename { .. } => "rename",
            Syscall::Sendto { .. } => "sendto",
            Syscall::Recvfrom { .. } => "recvfrom",
        }
    }

    /// True for process-creation syscalls (the anchors of descendant
    /// tracking in provenance analysis).
    pub fn spawned_child(&self) -> Option<ThreadId> {
        match self {
            Syscall::Fork {
                child_pid,
                child_tid,
            }
            | Syscall::Clone {
                child_pid,
                child_tid,
            } => Some(ThreadId::new(*child_pid, *child_tid)),
            _ => None,
        }
    }
}

/// Event payload: a real syscall or an injected delimiter. Delimiters are
/// first-class trace records, not syscalls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Syscall(Syscall),
    Delimiter(Delimiter),
}

impl Payload {
    pub fn as_syscall(&self) -> Option<&Syscall> {
        match self {
            Payload::Syscall(s) => Some(s),
            Payload::Delimiter(_) => None,
        }
    }

    pub fn as_delimiter(&self) -> Option<&Delimiter> {
        match self {
            Payload::Delimiter(d) => Some(d),
            Payload::Syscall(_) => None,
        }
    }
}

/// One trace record, annotated with its source host label.
///
/// `sock` is an analysis-time annotation (the network tuple in force for the
/// event's fd, filled in by fd resolution); it is never serialized to the
/// wire format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: Ns,
    pub host: String,
    pub pid: u32,
    pub tid: u32,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sock: Option<NetworkTuple>,
}

impl Event {
    pub fn thread(&self) -> ThreadId {
        ThreadId::new(self.pid, self.tid)
    }

    /// Total-order key within one host file.
    pub fn order_key(&self) -> (Ns, u64) {
        (self.ts, self.seq)
    }

    /// Total-order key across merged hosts: ties on ts broken by seq then
    /// host label.
    pub fn merge_key(&self) -> (Ns, u64, &str) {
        (self.ts, self.seq, self.host.as_str())
    }

    pub fn is_syscall(&self) -> bool {
        matches!(self.payload, Payload::Syscall(_))
    }

    pub fn is_delimiter(&self) -> bool {
        matches!(self.payload, Payload::Delimiter(_))
    }
}
