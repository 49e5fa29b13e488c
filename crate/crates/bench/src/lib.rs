//! Shared scenario builders for the criterion benches.

use rewind_core::partition::ServerModel;
use rewind_core::sim::{simulate, AttackKind, AttackSpec, ScenarioConfig, SimOutput};

/// A mid-size mixed workload with one multi-stage attack, reused across
/// benches so numbers are comparable.
pub fn benchmark_scenario(concurrency: usize, request_count: usize) -> SimOutput {
    let mut cfg = ScenarioConfig::new(77, concurrency, request_count, ServerModel::ThreadPerRequest);
    cfg.pool_size = 8;
    cfg.attacks.push(AttackSpec {
        kind: AttackKind::MultiStage,
        at_request_index: request_count / 3,
    });
    simulate(&cfg).expect("benchmark scenario simulates")
}
