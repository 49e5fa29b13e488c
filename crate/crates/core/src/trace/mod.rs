//! Canonical event model, trace parsing, multi-host merging, and fd→tuple
//! resolution. Everything downstream (partitioning, provenance, database
//! attribution) consumes the `EventLog` values produced here.

pub mod event;
pub mod fd;
pub mod log;
pub mod parse;

pub use event::{
    Delimiter, Event, Marker, NetworkTuple, Ns, Payload, RequestId, Syscall, ThreadId,
    BACKGROUND_REQUEST_ID,
};
pub use fd::{resolve_fd_tuples, FdResolution, UnknownFd};
pub use log::{merge_logs, EventLog};
pub use parse::{parse_trace, serialize_event, serialize_trace, ParseError, MAX_PAYLOAD_BYTES};
