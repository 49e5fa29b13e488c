//! Scenario configuration for the workload simulator.

use crate::partition::ServerModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which log form database operation extraction should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbLogMode {
    /// Statements recovered from the worker's write syscalls against the
    /// statement log file.
    SyscallStatementLog,
    /// Application log carries client ip:port; query it directly.
    ApplogWithClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Remote code execution: fork chain ending in a write outside data
    /// directories.
    RceWebshell,
    /// Injected statements inside the victim request's anchor.
    SqliWrite,
    /// Two-request chain: template overwrite in the database, then a
    /// render-triggered process chain that drops a webshell.
    MultiStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub at_request_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Concurrent client count (maximum in-flight requests).
    pub concurrency: usize,
    pub request_count: usize,
    pub server_model: ServerModel,
    pub pool_size: usize,
    pub db_log_mode: DbLogMode,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub event_loss_prob: f64,
    #[serde(default)]
    pub clock_skew_ns: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl ScenarioConfig {
    pub fn new(seed: u64, concurrency: usize, request_count: usize, model: ServerModel) -> Self {
        ScenarioConfig {
            seed,
            concurrency,
            request_count,
            server_model: model,
            pool_size: 8,
            db_log_mode: DbLogMode::SyscallStatementLog,
            attacks: Vec::new(),
            event_loss_prob: 0.0,
            clock_skew_ns: 0,
        }
    }

    /// Index of the second stage of a multi-stage attack starting at `k`.
    pub fn multi_stage_second_index(&self, k: usize) -> usize {
        k + (self.request_count / 10).max(5)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::InvalidConfig(m));
        if self.concurrency < 1 {
            return err("concurrency must be >= 1".into());
        }
        if self.pool_size < 1 {
            return err("pool_size must be >= 1".into());
        }
        if self.request_count < 1 {
            return err("request_count must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.event_loss_prob) {
            return err(format!(
                "event_loss_prob {} outside [0, 1]",
                self.event_loss_prob
            ));
        }
        for attack in &self.attacks {
            if attack.at_request_index >= self.request_count {
                return err(format!(
                    "attack index {} beyond request count {}",
                    attack.at_request_index, self.request_count
                ));
            }
            if attack.kind == AttackKind::MultiStage
                && self.multi_stage_second_index(attack.at_request_index) >= self.request_count
            {
                return err(format!(
                    "multi-stage attack at {} needs its second request before {}",
                    attack.at_request_index, self.request_count
                ));
            }
        }
        Ok(())
    }
}
