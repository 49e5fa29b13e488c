//! Deterministic toolkit that reconstructs, per HTTP request, every file
//! and database modification from syscall-level audit traces, and
//! surgically recovers system state: rewind to a clean snapshot, then
//! selectively replay only legitimate operations.
//!
//! Pipeline stages, each a pure function over immutable inputs:
//!
//! 1. [`trace`] — parse host traces, merge them, resolve socket fds to
//!    connection tuples.
//! 2. [`partition`] — split the web-host log into per-request syscall
//!    units using injected delimiter records.
//! 3. [`provenance`] — forward analysis from each unit over the global
//!    log: process trees, file operations, external interactions.
//! 4. [`attribution`] — spatiotemporal anchors bind a request's pooled
//!    connection activity to the exact database statements it executed.
//! 5. [`recovery`] — rollback-filter-replay plans for database and file
//!    system, executed copy-aside with an atomic swap.
//!
//! [`sim`] generates ground-truth-labeled workloads so attribution and
//! recovery accuracy are measurable; [`analysis`] composes the stages;
//! [`metrics`] scores them.

pub mod analysis;
pub mod attribution;
pub mod canonical;
pub mod metrics;
pub mod partition;
pub mod provenance;
pub mod recovery;
pub mod sim;
pub mod state;
pub mod trace;

pub use analysis::{run_analysis, AnalysisBundle, AnalysisConfig, NotificationReport};
pub use attribution::{Anchor, DbOperation, TimeWindow, WorkerRef};
pub use metrics::{attribution_metrics, CategoryMetrics, MetricsReport};
pub use partition::{partition, unit_for, PartitionResult, RequestUnit, ServerModel};
pub use provenance::{
    build_graph, collect_file_ops, detect_external, ExternalInteraction, FileOpKind,
    FileOperation, ProvenanceGraph,
};
pub use recovery::{
    compute_recovery_accuracy, compute_restored_sets, execute_db_recovery, execute_fs_recovery,
    plan_db_recovery, plan_fs_recovery, DecisionProvider, FsAction, FsPlanConfig,
    InteractiveChoice, OpKey, RecoveryError, RecoveryPlan, ScriptedDecisions,
};
pub use sim::{simulate, GroundTruth, ScenarioConfig, SimOutput};
pub use state::{DbSnapshot, DbState, FileTree, Store, StoreLayout, WriteLogRecord};
pub use trace::{Event, EventLog, NetworkTuple, Ns, RequestId, ThreadId};
