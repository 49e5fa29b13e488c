//! Canonical trace format: line-delimited JSON, one record per line.
//!
//! Record fields are exactly `seq`, `ts`, `pid`, `tid`, `kind`, plus
//! `name`/`args` for syscalls and `request_id`/`marker` for delimiters.
//! Unknown fields are rejected. Serialization emits fields in a fixed order
//! and omits absent args, so parse followed by serialize reproduces the
//! input byte for byte for any trace this crate emits.
//!
//! Write payloads travel inline as base64 (`data_b64`), capped at 1 MiB per
//! record; capture splits larger writes into multiple records.

use super::event::{Delimiter, Event, Marker, NetworkTuple, Payload, Syscall};
use super::log::EventLog;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::net::IpAddr;
use thiserror::Error;

/// Per-record payload cap. Larger writes are split at capture time.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: seq {seq} does not increase over previous seq {prev_seq}")]
    OrderViolation { line: usize, prev_seq: u64, seq: u64 },
    #[error("i/o error reading trace: {0}")]
    Io(#[from] std::io::Error),
}

fn malformed(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError::MalformedRecord {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum WireKind {
    Syscall,
    Delimiter,
}

/// Flat syscall argument record. Field order here is the wire order.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireArgs {
    #[serde(skip_serializing_if = "Option::is_none")]
    fd: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_fd: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    old_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    child_pid: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    child_tid: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    src_ip: Option<IpAddr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    src_port: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dst_ip: Option<IpAddr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dst_port: Option<u16>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    seq: u64,
    ts: u64,
    pid: u32,
    tid: u32,
    kind: WireKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    args: Option<WireArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    request_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    marker: Option<Marker>,
}

fn tuple_from_args(args: &WireArgs, line: usize) -> Result<NetworkTuple, ParseError> {
    let src_ip = args
        .src_ip
        .ok_or_else(|| malformed(line, "missing src_ip"))?;
    let src_port = args
        .src_port
        .ok_or_else(|| malformed(line, "missing src_port"))?;
    let dst_ip = args
        .dst_ip
        .ok_or_else(|| malformed(line, "missing dst_ip"))?;
    let dst_port = args
        .dst_port
        .ok_or_else(|| malformed(line, "missing dst_port"))?;
    for (label, port) in [("src_port", src_port), ("dst_port", dst_port)] {
        if port == 0 {
            return Err(malformed(line, format!("{label} out of range")));
        }
    }
    Ok(NetworkTuple::new(src_ip, src_port, dst_ip, dst_port))
}

fn decode_data(args: &WireArgs, line: usize) -> Result<Vec<u8>, ParseError> {
    let b64 = args
        .data_b64
        .as_deref()
        .ok_or_else(|| malformed(line, "missing data_b64"))?;
    let data = B64
        .decode(b64)
        .map_err(|e| malformed(line, format!("bad data_b64: {e}")))?;
    if data.len() > MAX_PAYLOAD_BYTES {
        return Err(malformed(
            line,
            format!("payload of {} bytes exceeds 1 MiB record cap", data.len()),
        ));
    }
    Ok(data)
}

fn syscall_from_wire(name: &str, args: WireArgs, line: usize) -> Result<Syscall, ParseError> {
    let need_fd = |a: &WireArgs| a.fd.ok_or_else(|| malformed(line, "missing fd"));
    let need_path = |a: &WireArgs| {
        a.path
            .clone()
            .ok_or_else(|| malformed(line, "missing path"))
    };
    let sc = match name {
        "fork" | "clone" => {
            let child_pid = args
                .child_pid
                .ok_or_else(|| malformed(line, "missing child_pid"))?;
            let child_tid = args
                .child_tid
                .ok_or_else(|| malformed(line, "missing child_tid"))?;
            if name == "fork" {
                Syscall::Fork {
                    child_pid,
                    child_tid,
                }
            } else {
                Syscall::Clone {
                    child_pid,
                    child_tid,
                }
            }
        }
        "execve" => Syscall::Execve {
            path: need_path(&args)?,
        },
        "exit" => Syscall::Exit,
        "socket" => Syscall::Socket { fd: need_fd(&args)? },
        "connect" => Syscall::Connect {
            fd: need_fd(&args)?,
            tuple: tuple_from_args(&args, line)?,
        },
        "accept" => Syscall::Accept {
            fd: need_fd(&args)?,
            tuple: tuple_from_args(&args, line)?,
        },
        "dup" => Syscall::Dup {
            fd: need_fd(&args)?,
            new_fd: args
                .new_fd
                .ok_or_else(|| malformed(line, "missing new_fd"))?,
        },
        "close" => Syscall::Close { fd: need_fd(&args)? },
        "openat" => Syscall::Openat {
            fd: need_fd(&args)?,
            path: need_path(&args)?,
        },
        "read" => Syscall::Read {
            fd: need_fd(&args)?,
            path: args.path.clone(),
        },
        "write" => {
            let data = decode_data(&args, line)?;
            if args.path.is_some() && args.offset.is_none() {
                return Err(malformed(line, "file write requires offset"));
            }
            Syscall::Write {
                fd: need_fd(&args)?,
                path: args.path.clone(),
                offset: args.offset,
                data,
            }
        }
        "unlink" => Syscall::Unlink {
            path: need_path(&args)?,
        },
        "rename" => Syscall::Rename {
            old_path: args
                .old_path
                .clone()
                .ok_or_else(|| malformed(line, "missing old_path"))?,
            new_path: args
                .new_path
                .clone()
                .ok_or_else(|| malformed(line, "missing new_path"))?,
        },
        "sendto" => Syscall::Sendto {
            fd: need_fd(&args)?,
            data: decode_data(&args, line)?,
        },
        "recvfrom" => Syscall::Recvfrom { fd: need_fd(&args)? },
        other => return Err(malformed(line, format!("unknown syscall name {other:?}"))),
    };
    Ok(sc)
}

fn syscall_to_wire(sc: &Syscall) -> (String, WireArgs) {
    let mut args = WireArgs::default();
    match sc {
        Syscall::Fork {
            child_pid,
            child_tid,
        }
        | Syscall::Clone {
            child_pid,
            child_tid,
        } => {
            args.child_pid = Some(*child_pid);
            args.child_tid = Some(*child_tid);
        }
        Syscall::Execve { path } => args.path = Some(path.clone()),
        Syscall::Exit => {}
        Syscall::Socket { fd } => args.fd = Some(*fd),
        Syscall::Connect { fd, tuple } | Syscall::Accept { fd, tuple } => {
            args.fd = Some(*fd);
            args.src_ip = Some(tuple.src_ip);
            args.src_port = Some(tuple.src_port);
            args.dst_ip = Some(tuple.dst_ip);
            args.dst_port = Some(tuple.dst_port);
        }
        Syscall::Dup { fd, new_fd } => {
            args.fd = Some(*fd);
            args.new_fd = Some(*new_fd);
        }
        Syscall::Close { fd } => args.fd = Some(*fd),
        Syscall::Openat { fd, path } => {
            args.fd = Some(*fd);
            args.path = Some(path.clone());
        }
        Syscall::Read { fd, path } => {
            args.fd = Some(*fd);
            args.path = path.clone();
        }
        Syscall::Write {
            fd,
            path,
            offset,
            data,
        } => {
            args.fd = Some(*fd);
            args.path = path.clone();
            args.offset = *offset;
            args.data_b64 = Some(B64.encode(data));
        }
        Syscall::Unlink { path } => args.path = Some(path.clone()),
        Syscall::Rename { old_path, new_path } => {
            args.old_path = Some(old_path.clone());
            args.new_path = Some(new_path.clone());
        }
        Syscall::Sendto { fd, data } => {
            args.fd = Some(*fd);
            args.data_b64 = Some(B64.encode(data));
        }
        Syscall::Recvfrom { fd } => args.fd = Some(*fd),
    }
    (sc.name().to_string(), args)
}

fn event_from_wire(rec: WireRecord, host: &str, line: usize) -> Result<Event, ParseError> {
    let payload = match rec.kind {
        WireKind::Syscall => {
            let name = rec
                .name
                .ok_or_else(|| malformed(line, "syscall record missing name"))?;
            if rec.request_id.is_some() || rec.marker.is_some() {
                return Err(malformed(line, "syscall record carries delimiter fields"));
            }
            let args = rec.args.unwrap_or_default();
            Payload::Syscall(syscall_from_wire(&name, args, line)?)
        }
        WireKind::Delimiter => {
            let request_id = rec
                .request_id
                .ok_or_else(|| malformed(line, "delimiter record missing request_id"))?;
            if request_id.is_empty() {
                return Err(malformed(line, "empty request_id"));
            }
            if rec.name.is_some() || rec.args.is_some() {
                return Err(malformed(line, "delimiter record carries syscall fields"));
            }
            let marker = rec
                .marker
                .ok_or_else(|| malformed(line, "delimiter record missing marker"))?;
            Payload::Delimiter(Delimiter { request_id, marker })
        }
    };
    Ok(Event {
        seq: rec.seq,
        ts: rec.ts,
        host: host.to_string(),
        pid: rec.pid,
        tid: rec.tid,
        payload,
        sock: None,
    })
}

fn event_to_wire(ev: &Event) -> WireRecord {
    let (kind, name, args, request_id, marker) = match &ev.payload {
        Payload::Syscall(sc) => {
            let (name, args) = syscall_to_wire(sc);
            (WireKind::Syscall, Some(name), Some(args), None, None)
        }
        Payload::Delimiter(d) => (
            WireKind::Delimiter,
            None,
            None,
            Some(d.request_id.clone()),
            Some(d.marker),
        ),
    };
    WireRecord {
        seq: ev.seq,
        ts: ev.ts,
        pid: ev.pid,
        tid: ev.tid,
        kind,
        name,
        args,
        request_id,
        marker,
    }
}

/// Parse a line-delimited trace stream into an event log. `host_label` is
/// stamped on every event; the wire format itself carries no host field.
pub fn parse_trace(stream: impl BufRead, host_label: &str) -> Result<EventLog, ParseError> {
    let mut events = Vec::new();
    let mut prev_seq: Option<u64> = None;
    for (idx, line) in stream.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.is_empty() {
            continue;
        }
        let rec: WireRecord = serde_json::from_str(&text)
            .map_err(|e| malformed(line_no, e.to_string()))?;
        if let Some(prev) = prev_seq {
            if rec.seq <= prev {
                return Err(ParseError::OrderViolation {
                    line: line_no,
                    prev_seq: prev,
                    seq: rec.seq,
                });
            }
        }
        prev_seq = Some(rec.seq);
        events.push(event_from_wire(rec, host_label, line_no)?);
    }
    Ok(EventLog::from_events(events))
}

/// Serialize one event as its wire line (no trailing newline).
pub fn serialize_event(ev: &Event) -> String {
    serde_json::to_string(&event_to_wire(ev)).expect("wire record serialization cannot fail")
}

/// Serialize a log back to the line-delimited wire format.
pub fn serialize_trace(log: &EventLog) -> String {
    let mut out = String::new();
    for ev in log.events() {
        out.push_str(&serialize_event(ev));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn empty_stream_parses_to_empty_log() {
        let log = parse_trace(Cursor::new(""), "web").unwrap();
        assert_eq!(log.events().len(), 0);
    }

    #[test]
    fn single_delimiter_line_parses() {
        let line = r#"{"seq":1,"ts":10,"pid":5,"tid":5,"kind":"delimiter","request_id":"r1","marker":"begin"}"#;
        let log = parse_trace(Cursor::new(line), "web").unwrap();
        assert_eq!(log.events().len(), 1);
        let ev = &log.events()[0];
        assert_eq!(ev.ts, 10);
        assert_eq!(ev.host, "web");
        let d = ev.payload.as_delimiter().unwrap();
        assert_eq!(d.request_id, "r1");
        assert_eq!(d.marker, Marker::Begin);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let line = r#"{"seq":1,"ts":10,"pid":5,"tid":5,"kind":"delimiter","request_id":"r1","marker":"begin","extra":1}"#;
        let err = parse_trace(Cursor::new(line), "web").unwrap_err();
        assert!(matches!(err, ParseError::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn seq_regression_is_an_order_violation() {
        let lines = concat!(
            r#"{"seq":2,"ts":10,"pid":5,"tid":5,"kind":"syscall","name":"exit","args":{}}"#,
            "\n",
            r#"{"seq":2,"ts":11,"pid":5,"tid":5,"kind":"syscall","name":"exit","args":{}}"#,
        );
        let err = parse_trace(Cursor::new(lines), "web").unwrap_err();
        assert!(matches!(err, ParseError::OrderViolation { .. }));
    }

    #[test]
    fn write_requires_data() {
        let line =
            r#"{"seq":1,"ts":10,"pid":5,"tid":5,"kind":"syscall","name":"write","args":{"fd":3}}"#;
        let err = parse_trace(Cursor::new(line), "web").unwrap_err();
        assert!(err.to_string().contains("data_b64"));
    }

    #[test]
    fn rename_requires_both_paths() {
        let line = r#"{"seq":1,"ts":10,"pid":5,"tid":5,"kind":"syscall","name":"rename","args":{"old_path":"/a"}}"#;
        let err = parse_trace(Cursor::new(line), "web").unwrap_err();
        assert!(err.to_string().contains("new_path"));
    }

    #[test]
    fn port_zero_is_rejected() {
        let line = r#"{"seq":1,"ts":10,"pid":5,"tid":5,"kind":"syscall","name":"connect","args":{"fd":7,"src_ip":"10.0.0.1","src_port":0,"dst_ip":"10.0.0.2","dst_port":5432}}"#;
        let err = parse_trace(Cursor::new(line), "web").unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn hand_built_round_trip_is_byte_identical() {
        let lines = concat!(
            r#"{"seq":1,"ts":10,"pid":5,"tid":5,"kind":"delimiter","request_id":"r1","marker":"begin"}"#,
            "\n",
            r#"{"seq":2,"ts":11,"pid":5,"tid":5,"kind":"syscall","name":"openat","args":{"fd":9,"path":"/data/a"}}"#,
            "\n",
            r#"{"seq":3,"ts":12,"pid":5,"tid":5,"kind":"syscall","name":"write","args":{"fd":9,"path":"/data/a","offset":0,"data_b64":"eA=="}}"#,
            "\n",
            r#"{"seq":4,"ts":13,"pid":5,"tid":5,"kind":"delimiter","request_id":"r1","marker":"end"}"#,
            "\n",
        );
        let log = parse_trace(Cursor::new(lines), "web").unwrap();
        assert_eq!(serialize_trace(&log), lines);
    }
}
