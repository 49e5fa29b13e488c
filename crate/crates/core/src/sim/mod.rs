//! Ground-truth-labeled workload simulator: interleaved multi-host traces
//! (web syscalls + delimiters, database syscalls + statement log,
//! write-log) for configurable concurrency, pooling, and attack scenarios.

pub mod config;
pub mod engine;
pub mod truth;

pub use config::{AttackKind, AttackSpec, DbLogMode, ScenarioConfig, SimError};
pub use engine::{
    db_endpoint, inject_event_loss, simulate, SimOutput, ACCESS_LOG_PATH, DB_HOST, STMT_LOG_PATH,
    WEBSHELL_PATH, WEB_HOST,
};
pub use truth::{BorrowSpan, DbOpLabel, ExternalTruth, FileOpLabel, GroundTruth};
