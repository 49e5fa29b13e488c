//! Per-request provenance graphs built by forward analysis over the global
//! log.
//!
//! The request unit's own syscalls form the root of the graph. Every
//! process-creation syscall (fork/clone) extends the causal chain: the new
//! process or thread is tracked through the global system log from its
//! creation timestamp onward, recursively, so file writes by multi-layered
//! descendants are visible at any path. A descendant that outlives the
//! request stays attributed to it for the rest of the analyzed window.
//!
//! All edges are directed actor → object (parent → child for
//! CREATE_PROCESS), so every node is reachable from the root along edge
//! direction. Read edges are kept for graph fidelity but excluded from
//! recovery inputs; only state-mutating edges matter for replay.

use crate::partition::RequestUnit;
use crate::trace::{Event, EventLog, NetworkTuple, Ns, Payload, Syscall, ThreadId};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::net::IpAddr;

/// Graph node identity. Processes are keyed by host as well: a merged
/// global log can span hosts and pid spaces must not collide.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeId {
    Process {
        host: String,
        pid: u32,
        tid: u32,
    },
    File {
        path: String,
    },
    Socket {
        tuple: NetworkTuple,
    },
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Process { host, pid, tid } => write!(f, "proc:{host}:{pid}/{tid}"),
            NodeId::File { path } => write!(f, "file:{path}"),
            NodeId::Socket { tuple } => write!(f, "sock:{tuple}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Node {
    pub id: NodeId,
    /// Executable path for process nodes (latest execve observed).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exe: Option<String>,
    /// True for the request's originating process segment(s).
    pub root: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    CreateProcess,
    Exec,
    Open,
    Write,
    Read,
    Delete,
    Rename,
    Send,
}

#[derive(Debug, Clone, Serialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: NodeId,
    pub to: NodeId,
    pub ts: Ns,
    /// Source event identity within its host file.
    pub seq: u64,
    pub host: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rename_to: Option<String>,
}

/// Provenance graph rooted at one request unit.
#[derive(Debug, Clone, Serialize)]
pub struct ProvenanceGraph {
    pub nodes: BTreeMap<String, Node>,
    pub edges: Vec<Edge>,
    pub roots: Vec<NodeId>,
    pub begin_ts: Ns,
    pub end_ts: Ns,
}

/// File operation kinds that mutate state. Files spring into existence on
/// first write; plain opens never appear here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileOpKind {
    Create,
    Write,
    Delete,
    Rename,
}

impl fmt::Display for FileOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FileOpKind::Create => "create",
            FileOpKind::Write => "write",
            FileOpKind::Delete => "delete",
            FileOpKind::Rename => "rename",
        };
        f.write_str(s)
    }
}

/// Reference to a write payload: where it lives in the source trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct PayloadRef {
    pub offset: u64,
    pub len: u64,
    pub host: String,
    pub seq: u64,
}

/// One file-system mutation attributed to a request.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FileOperation {
    pub path: String,
    pub kind: FileOpKind,
    pub ts: Ns,
    pub actor: ThreadId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<PayloadRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rename_to: Option<String>,
}

/// Aggregated outbound traffic to one non-database endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ExternalInteraction {
    pub tuple: NetworkTuple,
    pub first_ts: Ns,
    pub last_ts: Ns,
    pub byte_count: u64,
}

struct GraphBuilder {
    nodes: BTreeMap<String, Node>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    fn ensure_process(&mut self, host: &str, thread: ThreadId, root: bool) -> NodeId {
        let id = NodeId::Process {
            host: host.to_string(),
            pid: thread.pid,
            tid: thread.tid,
        };
        let entry = self.nodes.entry(id.to_string()).or_insert_with(|| Node {
            id: id.clone(),
            exe: None,
            root,
        });
        entry.root |= root;
        id
    }

    fn ensure_file(&mut self, path: &str) -> NodeId {
        let id = NodeId::File {
            path: path.to_string(),
        };
        self.nodes.entry(id.to_string()).or_insert_with(|| Node {
            id: id.clone(),
            exe: None,
            root: false,
        });
        id
    }

    fn ensure_socket(&mut self, tuple: NetworkTuple) -> NodeId {
        let id = NodeId::Socket { tuple };
        self.nodes.entry(id.to_string()).or_insert_with(|| Node {
            id: id.clone(),
            exe: None,
            root: false,
        });
        id
    }

    fn edge(&mut self, kind: EdgeKind, from: NodeId, to: NodeId, ev: &Event) -> &mut Edge {
        self.edges.push(Edge {
            kind,
            from,
            to,
            ts: ev.ts,
            seq: ev.seq,
            host: ev.host.clone(),
            offset: None,
            len: None,
            rename_to: None,
        });
        self.edges.last_mut().expect("just pushed")
    }
}

/// Build the provenance graph for one request over the merged global log.
pub fn build_graph(unit: &RequestUnit, global: &EventLog) -> ProvenanceGraph {
    let mut builder = GraphBuilder {
        nodes: BTreeMap::new(),
        edges: Vec::new(),
    };
    let mut roots = Vec::new();
    let mut seen_threads: BTreeSet<(String, ThreadId)> = BTreeSet::new();
    for seg in &unit.segments {
        let host = unit
            .events
            .first()
            .map(|e| e.host.clone())
            .unwrap_or_else(|| "web".to_string());
        if seen_threads.insert((host.clone(), seg.thread)) {
            roots.push(builder.ensure_process(&host, seg.thread, true));
        }
    }

    // Claim the unit's own events plus, transitively, every event of every
    // process/thread created by an already-claimed event, from its creation
    // ts onward (stopping after its exit).
    let mut claimed: Vec<&Event> = Vec::new();
    let mut claimed_keys: BTreeSet<(String, u64)> = BTreeSet::new();
    let mut queue: VecDeque<&Event> = unit.events.iter().collect();
    let mut claimed_threads: BTreeSet<(String, ThreadId, Ns)> = BTreeSet::new();
    while let Some(ev) = queue.pop_front() {
        if !claimed_keys.insert((ev.host.clone(), ev.seq)) {
            continue;
        }
        claimed.push(ev);
        if let Some(sc) = ev.payload.as_syscall() {
            if let Some(child) = sc.spawned_child() {
                let key = (ev.host.clone(), child, ev.ts);
                if !claimed_threads.insert(key) {
                    continue;
                }
                // Creation ts disambiguates pid reuse: claim the child's
                // events at or after the spawn, up to and including its
                // first exit in that range.
                for cev in global.thread_events(child) {
                    if cev.host != ev.host || cev.ts < ev.ts {
                        continue;
                    }
                    if !cev.is_syscall() {
                        continue;
                    }
                    queue.push_back(cev);
                    if matches!(cev.payload.as_syscall(), Some(Syscall::Exit)) {
                        break;
                    }
                }
            }
        }
    }
    claimed.sort_by(|a, b| a.merge_key().cmp(&b.merge_key()));

    let mut end_ts = unit.end_ts;
    for ev in claimed {
        end_ts = end_ts.max(ev.ts);
        let Payload::Syscall(sc) = &ev.payload else {
            continue;
        };
        let actor = builder.ensure_process(&ev.host, ev.thread(), false);
        match sc {
            Syscall::Fork { .. } | Syscall::Clone { .. } => {
                let child = sc.spawned_child().expect("spawn syscall");
                let child_id = builder.ensure_process(&ev.host, child, false);
                builder.edge(EdgeKind::CreateProcess, actor, child_id, ev);
            }
            Syscall::Execve { path } => {
                let file = builder.ensure_file(path);
                builder.edge(EdgeKind::Exec, actor.clone(), file, ev);
                let key = actor.to_string();
                if let Some(node) = builder.nodes.get_mut(&key) {
                    node.exe = Some(path.clone());
                }
            }
            Syscall::Openat { path, .. } => {
                let file = builder.ensure_file(path);
                builder.edge(EdgeKind::Open, actor, file, ev);
            }
            Syscall::Write {
                path: Some(path),
                offset,
                data,
                ..
            } => {
                let file = builder.ensure_file(path);
                let e = builder.edge(EdgeKind::Write, actor, file, ev);
                e.offset = *offset;
                e.len = Some(data.len() as u64);
            }
            Syscall::Write { data, .. } => {
                if let Some(tuple) = ev.sock {
                    let sockn = builder.ensure_socket(tuple);
                    let e = builder.edge(EdgeKind::Send, actor, sockn, ev);
                    e.len = Some(data.len() as u64);
                }
            }
            Syscall::Sendto { data, .. } => {
                if let Some(tuple) = ev.sock {
                    let sockn = builder.ensure_socket(tuple);
                    let e = builder.edge(EdgeKind::Send, actor, sockn, ev);
                    e.len = Some(data.len() as u64);
                }
            }
            Syscall::Read { path: Some(path), .. } => {
                let file = builder.ensure_file(path);
                builder.edge(EdgeKind::Read, actor, file, ev);
            }
            Syscall::Read { .. } | Syscall::Recvfrom { .. } => {
                if let Some(tuple) = ev.sock {
                    let sockn = builder.ensure_socket(tuple);
                    builder.edge(EdgeKind::Read, actor, sockn, ev);
                }
            }
            Syscall::Unlink { path } => {
                let file = builder.ensure_file(path);
                builder.edge(EdgeKind::Delete, actor, file, ev);
            }
            Syscall::Rename { old_path, new_path } => {
                let file = builder.ensure_file(old_path);
                let e = builder.edge(EdgeKind::Rename, actor, file, ev);
                e.rename_to = Some(new_path.clone());
            }
            Syscall::Socket { .. }
            | Syscall::Connect { .. }
            | Syscall::Accept { .. }
            | Syscall::Dup { .. }
            | Syscall::Close { .. }
            | Syscall::Exit => {}
        }
    }

    ProvenanceGraph {
        nodes: builder.nodes,
        edges: builder.edges,
        roots,
        begin_ts: unit.begin_ts,
        end_ts,
    }
}

impl ProvenanceGraph {
    /// Check structural invariants: CREATE_PROCESS edges form a forest
    /// rooted at the request's owner segments (no cycles), and every node is
    /// reachable from a root along edge direction.
    pub fn validate(&self) -> Result<(), String> {
        let mut parents: BTreeMap<String, String> = BTreeMap::new();
        for e in &self.edges {
            if e.kind == EdgeKind::CreateProcess {
                let child = e.to.to_string();
                let parent = e.from.to_string();
                if let Some(prev) = parents.get(&child) {
                    if prev != &parent {
                        return Err(format!("process {child} has two parents"));
                    }
                }
                parents.insert(child, parent);
            }
        }
        // Cycle check over the parent chain.
        for start in parents.keys() {
            let mut hops = 0;
            let mut cur = start.clone();
            while let Some(p) = parents.get(&cur) {
                cur = p.clone();
                hops += 1;
                if hops > parents.len() {
                    return Err(format!("CREATE_PROCESS cycle through {start}"));
                }
            }
        }

        let mut adj: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        let edge_keys: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|e| (e.from.to_string(), e.to.to_string()))
            .collect();
        for (from, to) in &edge_keys {
            adj.entry(from.as_str()).or_default().push(to.clone());
        }
        let mut reachable: BTreeSet<String> = BTreeSet::new();
        let mut stack: Vec<String> = self.roots.iter().map(|r| r.to_string()).collect();
        while let Some(id) = stack.pop() {
            if !reachable.insert(id.clone()) {
                continue;
            }
            if let Some(next) = adj.get(id.as_str()) {
                stack.extend(next.iter().cloned());
            }
        }
        for id in self.nodes.keys() {
            if !reachable.contains(id) {
                return Err(format!("node {id} unreachable from root"));
            }
        }
        for e in &self.edges {
            if e.ts < self.begin_ts {
                return Err(format!("edge at ts {} precedes unit begin {}", e.ts, self.begin_ts));
            }
        }
        Ok(())
    }

    /// Line-delimited JSON export with stable field order: nodes first
    /// (sorted by id), then edges in (ts, seq) order.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct NodeLine<'a> {
            #[serde(rename = "type")]
            ty: &'static str,
            id: String,
            #[serde(flatten)]
            node: &'a Node,
        }
        #[derive(Serialize)]
        struct EdgeLine<'a> {
            #[serde(rename = "type")]
            ty: &'static str,
            #[serde(flatten)]
            edge: &'a Edge,
        }
        let mut out = String::new();
        for (id, node) in &self.nodes {
            let line = NodeLine {
                ty: "node",
                id: id.clone(),
                node,
            };
            out.push_str(&serde_json::to_string(&line).expect("node serializes"));
            out.push('\n');
        }
        let mut edges: Vec<&Edge> = self.edges.iter().collect();
        edges.sort_by_key(|e| (e.ts, e.seq, e.host.clone()));
        for edge in edges {
            let line = EdgeLine { ty: "edge", edge };
            out.push_str(&serde_json::to_string(&line).expect("edge serializes"));
            out.push('\n');
        }
        out
    }

    /// The chain of process nodes reached from the first root via
    /// CREATE_PROCESS edges, in creation order. Handy for inspecting
    /// exploit process trees.
    pub fn process_chain(&self) -> Vec<&Node> {
        let mut chain: Vec<&Node> = Vec::new();
        let mut frontier: Vec<String> = self.roots.iter().map(|r| r.to_string()).collect();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        while let Some(id) = frontier.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(node) = self.nodes.get(&id) {
                if matches!(node.id, NodeId::Process { .. }) {
                    chain.push(node);
                }
            }
            let mut children: Vec<(Ns, u64, String)> = self
                .edges
                .iter()
                .filter(|e| e.kind == EdgeKind::CreateProcess && e.from.to_string() == id)
                .map(|e| (e.ts, e.seq, e.to.to_string()))
                .collect();
            children.sort();
            // Depth-first, earliest child explored first.
            for (_, _, child) in children.into_iter().rev() {
                frontier.push(child);
            }
        }
        chain
    }
}

/// All state-mutating file operations in the graph, ordered by (ts, seq).
/// Reads and plain opens are excluded.
pub fn collect_file_ops(graph: &ProvenanceGraph) -> Vec<FileOperation> {
    let mut ops = Vec::new();
    for e in &graph.edges {
        let (kind, path) = match (&e.kind, &e.to) {
            (EdgeKind::Write, NodeId::File { path }) => (FileOpKind::Write, path.clone()),
            (EdgeKind::Delete, NodeId::File { path }) => (FileOpKind::Delete, path.clone()),
            (EdgeKind::Rename, NodeId::File { path }) => (FileOpKind::Rename, path.clone()),
            _ => continue,
        };
        let actor = match &e.from {
            NodeId::Process { pid, tid, .. } => ThreadId::new(*pid, *tid),
            _ => continue,
        };
        ops.push(FileOperation {
            path,
            kind,
            ts: e.ts,
            actor,
            payload: match kind {
                FileOpKind::Write => Some(PayloadRef {
                    offset: e.offset.unwrap_or(0),
                    len: e.len.unwrap_or(0),
                    host: e.host.clone(),
                    seq: e.seq,
                }),
                _ => None,
            },
            rename_to: e.rename_to.clone(),
        });
    }
    ops.sort_by(|a, b| {
        (a.ts, a.payload.as_ref().map(|p| p.seq).unwrap_or(0))
            .cmp(&(b.ts, b.payload.as_ref().map(|p| p.seq).unwrap_or(0)))
    });
    ops
}

/// One interaction per distinct outbound tuple whose destination is not a
/// configured database endpoint, aggregating sent bytes on that socket.
pub fn detect_external(
    graph: &ProvenanceGraph,
    db_endpoints: &BTreeSet<(IpAddr, u16)>,
) -> Vec<ExternalInteraction> {
    let mut agg: BTreeMap<NetworkTuple, ExternalInteraction> = BTreeMap::new();
    for e in &graph.edges {
        if e.kind != EdgeKind::Send {
            continue;
        }
        let NodeId::Socket { tuple } = &e.to else {
            continue;
        };
        if db_endpoints.contains(&tuple.dst_endpoint()) {
            continue;
        }
        let entry = agg.entry(*tuple).or_insert(ExternalInteraction {
            tuple: *tuple,
            first_ts: e.ts,
            last_ts: e.ts,
            byte_count: 0,
        });
        entry.first_ts = entry.first_ts.min(e.ts);
        entry.last_ts = entry.last_ts.max(e.ts);
        entry.byte_count += e.len.unwrap_or(0);
    }
    agg.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{partition, unit_for, ServerModel};
    use crate::trace::event::{Delimiter, Marker};
    use crate::trace::{merge_logs, resolve_fd_tuples};

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

        fn push(&mut self, pid: u32, tid: u32, payload: Payload) -> &mut Self {
            self.seq += 1;
            self.events.push(Event {
                seq: self.seq,
                ts: self.seq * 10,
                host: "web".into(),
                pid,
                tid,
                payload,
                sock: None,
            });
            self
        }

        fn delim(&mut self, tid: u32, rid: &str, marker: Marker) -> &mut Self {
            self.push(
                1,
                tid,
                Payload::Delimiter(Delimiter {
                    request_id: rid.into(),
                    marker,
                }),
            )
        }

        fn sys(&mut self, pid: u32, tid: u32, sc: Syscall) -> &mut Self {
            self.push(pid, tid, Payload::Syscall(sc))
        }

        fn log(&self) -> EventLog {
            EventLog::from_events(self.events.clone())
        }
    }

    fn write_sc(path: &str, data: &[u8]) -> Syscall {
        Syscall::Write {
            fd: 9,
            path: Some(path.into()),
            offset: Some(0),
            data: data.to_vec(),
        }
    }

    fn graph_for(b: &Builder, rid: &str) -> ProvenanceGraph {
        let resolved = resolve_fd_tuples(&b.log()).log;
        let parts = partition(&resolved, ServerModel::ThreadPerRequest).unwrap();
        let unit = unit_for(&parts, rid).unwrap();
        build_graph(unit, &resolved)
    }

    #[test]
    fn single_write_yields_root_process_and_file_edge() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(1, 5, write_sc("/data/a", b"x"))
            .delim(5, "r1", Marker::End);
        let g = graph_for(&b, "r1");
        g.validate().unwrap();
        assert_eq!(g.roots.len(), 1);
        let writes: Vec<_> = g.edges.iter().filter(|e| e.kind == EdgeKind::Write).collect();
        assert_eq!(writes.len(), 1);
        assert_eq!(writes[0].to.to_string(), "file:/data/a");
    }

    #[test]
    fn descendant_chain_is_tracked_through_global_log() {
        // Worker clones sh; sh clones curl; curl writes the payload after
        // the request already ended.
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(1, 5, Syscall::Clone { child_pid: 70, child_tid: 70 })
            .delim(5, "r1", Marker::End)
            .sys(70, 70, Syscall::Execve { path: "/bin/sh".into() })
            .sys(70, 70, Syscall::Clone { child_pid: 71, child_tid: 71 })
            .sys(71, 71, Syscall::Execve { path: "/usr/bin/curl".into() })
            .sys(71, 71, write_sc("/tmp/Webshell", b"evil"))
            .sys(71, 71, Syscall::Exit)
            .sys(70, 70, Syscall::Exit);
        let g = graph_for(&b, "r1");
        g.validate().unwrap();
        let chain = g.process_chain();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain[1].exe.as_deref(), Some("/bin/sh"));
        assert_eq!(chain[2].exe.as_deref(), Some("/usr/bin/curl"));
        let ops = collect_file_ops(&g);
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].path, "/tmp/Webshell");
        assert_eq!(ops[0].kind, FileOpKind::Write);
    }

    #[test]
    fn decoy_processes_do_not_change_the_graph() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(1, 5, write_sc("/data/a", b"x"))
            .delim(5, "r1", Marker::End);
        let g1 = graph_for(&b, "r1");
        // Inject unrelated decoy process activity into the global log.
        let mut decoyed = b.log().events().to_vec();
        for i in 0..20u64 {
            decoyed.push(Event {
                seq: 1001 + i,
                ts: 5 + i,
                host: "web".into(),
                pid: 900 + i as u32,
                tid: 900 + i as u32,
                payload: Payload::Syscall(write_sc("/data/decoy", b"zzz")),
                sock: None,
            });
        }
        let global = merge_logs(vec![EventLog::from_events(decoyed)]);
        let parts = partition(&global, ServerModel::ThreadPerRequest).unwrap();
        let unit = unit_for(&parts, "r1").unwrap();
        let g2 = build_graph(unit, &global);
        assert_eq!(g1.to_jsonl(), g2.to_jsonl());
    }

    #[test]
    fn write_then_rename_orders_file_ops_by_ts() {
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(1, 5, write_sc("/data/a", b"x"))
            .sys(
                1,
                5,
                Syscall::Rename {
                    old_path: "/data/a".into(),
                    new_path: "/data/b".into(),
                },
            )
            .delim(5, "r1", Marker::End);
        let g = graph_for(&b, "r1");
        let ops = collect_file_ops(&g);
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[0].kind, FileOpKind::Write);
        assert_eq!(ops[1].kind, FileOpKind::Rename);
        assert_eq!(ops[1].rename_to.as_deref(), Some("/data/b"));
        assert!(ops[0].ts < ops[1].ts);
    }

    #[test]
    fn external_detection_excludes_db_endpoints_and_aggregates() {
        let db_ip: IpAddr = "10.0.0.2".parse().unwrap();
        let ext_ip: IpAddr = "203.0.113.5".parse().unwrap();
        let db_tuple = NetworkTuple::new("10.0.0.1".parse().unwrap(), 40000, db_ip, 5432);
        let ext_tuple = NetworkTuple::new("10.0.0.1".parse().unwrap(), 40001, ext_ip, 80);
        let mut b = Builder::new();
        b.delim(5, "r1", Marker::Begin)
            .sys(1, 5, Syscall::Socket { fd: 7 })
            .sys(1, 5, Syscall::Connect { fd: 7, tuple: db_tuple })
            .sys(1, 5, Syscall::Sendto { fd: 7, data: b"q".to_vec() })
            .sys(1, 5, Syscall::Socket { fd: 8 })
            .sys(1, 5, Syscall::Connect { fd: 8, tuple: ext_tuple })
            .sys(1, 5, Syscall::Sendto { fd: 8, data: b"GET /".to_vec() })
            .sys(1, 5, Syscall::Sendto { fd: 8, data: b"more".to_vec() })
            .delim(5, "r1", Marker::End);
        let g = graph_for(&b, "r1");
        let endpoints: BTreeSet<(IpAddr, u16)> = [(db_ip, 5432)].into_iter().collect();
        let ext = detect_external(&g, &endpoints);
        assert_eq!(ext.len(), 1);
        assert_eq!(ext[0].tuple, ext_tuple);
        assert_eq!(ext[0].byte_count, 9);
        assert!(ext[0].first_ts <= ext[0].last_ts);

        // A graph touching only the db endpoint reports nothing.
        let mut only_db = Builder::new();
        only_db
            .delim(5, "r2", Marker::Begin)
            .sys(1, 5, Syscall::Socket { fd: 7 })
            .sys(1, 5, Syscall::Connect { fd: 7, tuple: db_tuple })
            .sys(1, 5, Syscall::Sendto { fd: 7, data: b"q".to_vec() })
            .delim(5, "r2", Marker::End);
        let g2 = graph_for(&only_db, "r2");
        assert!(detect_external(&g2, &endpoints).is_empty());
    }
}
