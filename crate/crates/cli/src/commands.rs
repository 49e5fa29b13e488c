//! Command implementations and the trace-directory layout.
//!
//! A traces directory holds `web.trace.jsonl`, `db.trace.jsonl`,
//! `db_app.log`, `write_log.jsonl`, the deployment descriptor
//! `analysis.json`, `scenario.json` (simulator echo), `ground_truth.json`,
//! and the recoverable `store/`.

use crate::OutputFormat;
use rewind_core::analysis::{graph_for_request, run_analysis, AnalysisBundle, AnalysisConfig};
use rewind_core::attribution::{app_log_to_operations, parse_app_log, AppLogEntry};
use rewind_core::canonical::to_canonical_json;
use rewind_core::metrics::{attribution_metrics, render_table};
use rewind_core::partition::partition as partition_log;
use rewind_core::recovery::{
    compute_recovery_accuracy, compute_restored_sets, execute_db_recovery, execute_fs_recovery,
    plan_db_recovery, plan_fs_recovery, DecisionProvider, FlaggedWrite, FsPlanConfig,
    InteractiveChoice, OpKey, RecoveryError, RecoveryPlan, ScriptedDecisions,
};
use rewind_core::sim::{simulate as run_simulation, GroundTruth, ScenarioConfig};
use rewind_core::state::{parse_write_log, serialize_write_log, Classification, DirClass};
use rewind_core::trace::{parse_trace, resolve_fd_tuples, EventLog};
use rewind_core::{RequestId, Store, StoreLayout, WriteLogRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

pub enum CliError {
    /// Bad arguments or unreadable/unparseable inputs → exit 2.
    Usage(String),
    /// Recovery precondition failed (e.g. no clean snapshot) → exit 3.
    Precondition(String),
    /// Internal invariant violation → exit 4.
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Precondition(m) => write!(f, "{m}"),
            CliError::Invariant(m) => write!(f, "{m}"),
        }
    }
}

fn usage(context: &str, err: impl fmt::Display) -> CliError {
    CliError::Usage(format!("{context}: {err}"))
}

/// Print to stdout, treating a closed pipe (e.g. `rewind ... | head`) as a
/// clean exit rather than a panic.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        if let Err(e) = writeln!(lock, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        if let Err(e) = write!(lock, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

impl From<RecoveryError> for CliError {
    fn from(err: RecoveryError) -> Self {
        match err {
            RecoveryError::NoCleanSnapshot { .. } => CliError::Precondition(err.to_string()),
            RecoveryError::ProviderAbort { .. } => CliError::Usage(err.to_string()),
            RecoveryError::Classification(_) | RecoveryError::UniverseMismatch { .. } => {
                CliError::Invariant(err.to_string())
            }
            RecoveryError::Replay(_) | RecoveryError::Backup(_) => {
                CliError::Invariant(err.to_string())
            }
        }
    }
}

// ---- traces directory layout ----

struct TracesDir {
    root: PathBuf,
}

impl TracesDir {
    fn new(root: &Path) -> Self {
        TracesDir {
            root: root.to_path_buf(),
        }
    }

    fn web_trace(&self) -> PathBuf {
        self.root.join("web.trace.jsonl")
    }

    fn db_trace(&self) -> PathBuf {
        self.root.join("db.trace.jsonl")
    }

    fn app_log(&self) -> PathBuf {
        self.root.join("db_app.log")
    }

    fn write_log(&self) -> PathBuf {
        self.root.join("write_log.jsonl")
    }

    fn scenario(&self) -> PathBuf {
        self.root.join("scenario.json")
    }

    fn analysis(&self) -> PathBuf {
        self.root.join("analysis.json")
    }

    fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    fn store(&self) -> PathBuf {
        self.root.join("store")
    }

    fn recovery_report(&self) -> PathBuf {
        self.root.join("recovery_report.json")
    }

    fn load_web(&self) -> Result<EventLog, CliError> {
        load_trace(&self.web_trace(), "web")
    }

    fn load_db(&self) -> Result<EventLog, CliError> {
        load_trace(&self.db_trace(), "db")
    }

    fn load_app_log(&self) -> Result<Vec<AppLogEntry>, CliError> {
        let path = self.app_log();
        let text = fs::read_to_string(&path).map_err(|e| usage(&path.display().to_string(), e))?;
        parse_app_log(&text).map_err(|e| usage(&path.display().to_string(), e))
    }

    fn load_write_log(&self) -> Result<Vec<WriteLogRecord>, CliError> {
        let path = self.write_log();
        let text = fs::read_to_string(&path).map_err(|e| usage(&path.display().to_string(), e))?;
        parse_write_log(&text).map_err(|e| usage(&path.display().to_string(), e))
    }

    fn load_analysis_config(&self) -> Result<AnalysisConfig, CliError> {
        read_json(&self.analysis())
    }
}

fn load_trace(path: &Path, host: &str) -> Result<EventLog, CliError> {
    let file = fs::File::open(path).map_err(|e| usage(&path.display().to_string(), e))?;
    parse_trace(BufReader::new(file), host).map_err(|e| usage(&path.display().to_string(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(&path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| usage(&path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| usage(&parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| usage(&path.display().to_string(), e))
}

fn load_classification(path: Option<&Path>) -> Result<Option<Classification>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let prefixes: BTreeMap<String, DirClass> = read_json(path)?;
    let classification = Classification::new(prefixes)
        .map_err(|e| usage(&path.display().to_string(), e))?;
    Ok(Some(classification))
}

// ---- subcommands ----

pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut config: ScenarioConfig = read_json(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let sim = run_simulation(&config).map_err(|e| usage("simulate", e))?;

    let dir = TracesDir::new(out);
    write_text(&dir.web_trace(), &sim.web_trace)?;
    write_text(&dir.db_trace(), &sim.db_trace)?;
    write_text(&dir.app_log(), &sim.app_log_text)?;
    write_text(&dir.write_log(), &serialize_write_log(&sim.write_log))?;
    write_text(&dir.scenario(), &to_canonical_json(&sim.config))?;
    let analysis = AnalysisConfig {
        model: sim.config.server_model,
        db_endpoints: sim.truth.db_endpoints.clone(),
        stmt_log_path: sim.truth.stmt_log_path.clone(),
        db_log_mode: sim.config.db_log_mode,
        clock_skew_ns: sim.config.clock_skew_ns,
    };
    write_text(&dir.analysis(), &to_canonical_json(&analysis))?;
    write_text(&dir.ground_truth(), &to_canonical_json(&sim.truth))?;
    sim.store
        .save(&StoreLayout::new(dir.store()))
        .map_err(|e| usage("store", e))?;

    eprintln!(
        "simulated {} requests ({} malicious), {} web events, {} db events → {}",
        sim.truth.request_ids.len(),
        sim.truth.malicious.len(),
        sim.web.len(),
        sim.db.len(),
        out.display()
    );
    Ok(())
}

pub fn partition(traces: &Path, format: OutputFormat) -> Result<(), CliError> {
    let dir = TracesDir::new(traces);
    let config = dir.load_analysis_config()?;
    let web = dir.load_web()?;
    let resolved = resolve_fd_tuples(&web).log;
    let parts =
        partition_log(&resolved, config.model).map_err(|e| usage("partition", e))?;

    #[derive(Serialize)]
    struct UnitSummary<'a> {
        request_id: &'a str,
        syscalls: usize,
        begin_ts: u64,
        end_ts: u64,
        unclosed: bool,
    }
    let summaries: Vec<UnitSummary> = parts
        .units
        .values()
        .map(|u| UnitSummary {
            request_id: &u.request_id,
            syscalls: u.events.len(),
            begin_ts: u.begin_ts,
            end_ts: u.end_ts,
            unclosed: u.unclosed,
        })
        .collect();
    match format {
        OutputFormat::Json => {
            outln!("{}", to_canonical_json(&summaries));
        }
        OutputFormat::Table => {
            outln!("request     syscalls  begin_ts             end_ts               unclosed");
            for s in &summaries {
                outln!(
                    "{:<11} {:<9} {:<20} {:<20} {}",
                    s.request_id, s.syscalls, s.begin_ts, s.end_ts, s.unclosed
                );
            }
            outln!(
                "{} units, {} background syscalls",
                summaries.len(),
                parts.background.events.len()
            );
        }
    }
    Ok(())
}

pub fn trace(traces: &Path, request: &str, out: Option<&Path>) -> Result<(), CliError> {
    let dir = TracesDir::new(traces);
    let config = dir.load_analysis_config()?;
    let web = dir.load_web()?;
    let db = dir.load_db()?;
    let (graph, _unit) = graph_for_request(&web, &db, config.model, request)
        .map_err(|e| usage("trace", e))?;
    graph
        .validate()
        .map_err(CliError::Invariant)?;
    let jsonl = graph.to_jsonl();
    match out {
        Some(path) => write_text(path, &jsonl)?,
        None => out!("{jsonl}"),
    }
    Ok(())
}

fn effective_config(
    mut config: AnalysisConfig,
    db_endpoints: &[String],
) -> AnalysisConfig {
    if !db_endpoints.is_empty() {
        config.db_endpoints = db_endpoints.to_vec();
    }
    config
}

pub fn attribute(
    traces: &Path,
    request: &str,
    db_endpoints: &[String],
    format: OutputFormat,
) -> Result<(), CliError> {
    let dir = TracesDir::new(traces);
    let config = effective_config(dir.load_analysis_config()?, db_endpoints);
    let web = dir.load_web()?;
    let db = dir.load_db()?;
    let app_log = dir.load_app_log()?;
    let bundle = run_analysis(&web, &db, &app_log, &config, &BTreeSet::new())
        .map_err(|e| usage("attribute", e))?;
    let ra = bundle
        .requests
        .get(request)
        .ok_or_else(|| CliError::Usage(format!("unknown request id {request:?}")))?;
    match format {
        OutputFormat::Json => {
            outln!("{}", to_canonical_json(ra));
        }
        OutputFormat::Table => {
            outln!("request {request}: {} anchors", ra.anchors.len());
            for a in &ra.anchors {
                outln!(
                    "  anchor {} window [{}, {})",
                    a.tuple, a.window.start, a.window.end
                );
            }
            outln!("  {} database operations", ra.db_ops.len());
            for op in &ra.db_ops {
                outln!("    {} {} [{}]", op.ts, op.statement, op.worker);
            }
        }
    }
    Ok(())
}

pub fn analyze(
    traces: &Path,
    malicious: &[String],
    out: &Path,
    db_endpoints: &[String],
) -> Result<(), CliError> {
    let dir = TracesDir::new(traces);
    let config = effective_config(dir.load_analysis_config()?, db_endpoints);
    let web = dir.load_web()?;
    let db = dir.load_db()?;
    let app_log = dir.load_app_log()?;
    let malicious_ids: BTreeSet<RequestId> =
        malicious.iter().filter(|s| !s.is_empty()).cloned().collect();
    for rid in &malicious_ids {
        if !web
            .request_index()
            .contains_key(rid)
        {
            return Err(CliError::Usage(format!(
                "malicious request id {rid:?} not present in the web trace"
            )));
        }
    }
    let bundle = run_analysis(&web, &db, &app_log, &config, &malicious_ids)
        .map_err(|e| usage("analyze", e))?;
    write_text(out, &to_canonical_json(&bundle))?;
    for (stage, ms) in &bundle.timings_ms {
        eprintln!("stage {stage}: {ms} ms");
    }
    eprintln!(
        "analyzed {} requests; malicious sets: {} db ops, {} file ops; {} notifications → {}",
        bundle.requests.len(),
        bundle.malicious_db_ops().len(),
        bundle.malicious_file_ops().len(),
        bundle.notifications.len(),
        out.display()
    );
    Ok(())
}

fn build_plan(
    bundle: &AnalysisBundle,
    dir: &TracesDir,
    store_path: Option<&Path>,
    classify: Option<&Path>,
) -> Result<(RecoveryPlan, Store, StoreLayout), CliError> {
    let layout = StoreLayout::new(store_path.map(Path::to_path_buf).unwrap_or(dir.store()));
    let mut store = Store::load(&layout).map_err(|e| usage("store", e))?;
    if let Some(classification) = load_classification(classify)? {
        store.tree.classification = classification;
    }
    let app_log = dir.load_app_log()?;
    let write_log = dir.load_write_log()?;
    let full_log = app_log_to_operations(&app_log);
    let db = plan_db_recovery(&bundle.malicious_db_ops(), &store.snapshots, &full_log)?;
    let fs = plan_fs_recovery(
        &bundle.malicious_file_ops(),
        &store.tree,
        &store.chain,
        &write_log,
        &FsPlanConfig::default(),
    )?;
    Ok((RecoveryPlan { db, fs }, store, layout))
}

pub fn plan(
    bundle_path: &Path,
    traces: &Path,
    store_path: Option<&Path>,
    out: &Path,
    classify: Option<&Path>,
) -> Result<(), CliError> {
    let bundle: AnalysisBundle = read_json(bundle_path)?;
    let dir = TracesDir::new(traces);
    let (plan, _store, _layout) = build_plan(&bundle, &dir, store_path, classify)?;
    write_text(out, &to_canonical_json(&plan))?;
    eprintln!(
        "plan: db baseline ts {} with {} replayed / {} filtered operations; {} file actions → {}",
        plan.db.baseline.ts,
        plan.db.replay.len(),
        plan.db.filtered,
        plan.fs.len(),
        out.display()
    );
    Ok(())
}

/// Interactive decision provider over stdin/stdout.
struct PromptProvider;

impl DecisionProvider for PromptProvider {
    fn decide(
        &mut self,
        path: &str,
        history: &[FlaggedWrite],
    ) -> Result<InteractiveChoice, String> {
        let malicious = history.iter().filter(|w| w.malicious).count();
        outln!(
            "interactive: {path} has {} logged writes ({malicious} flagged malicious)",
            history.len()
        );
        outln!("choose for {path} [full_rollback|selective_replay|skip]: ");
        std::io::stdout().flush().ok();
        let mut line = String::new();
        std::io::stdin()
            .lock()
            .read_line(&mut line)
            .map_err(|e| format!("stdin: {e}"))?;
        match line.trim() {
            "full_rollback" => Ok(InteractiveChoice::FullRollback),
            "selective_replay" => Ok(InteractiveChoice::SelectiveReplay),
            "skip" => Ok(InteractiveChoice::Skip),
            other => Err(format!("unrecognized choice {other:?}")),
        }
    }
}

/// One scripted decision record.
#[derive(Debug, Serialize, Deserialize)]
struct DecisionRecord {
    path: String,
    choice: InteractiveChoice,
}

/// Summary written after a recovery run; `restored` feeds the strict
/// accuracy criterion in `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub baseline_ts: u64,
    pub db_replayed: usize,
    pub db_filtered: usize,
    pub fs_actions: usize,
    pub dependency_warnings: usize,
    pub interactive_choices: BTreeMap<String, InteractiveChoice>,
    pub recovered_db_hash: String,
    pub recovered_tree_hash: String,
    pub restored: BTreeMap<RequestId, BTreeSet<OpKey>>,
}

#[allow(clippy::too_many_arguments)]
pub fn recover(
    bundle_path: &Path,
    traces: &Path,
    store_path: Option<&Path>,
    decisions: Option<&Path>,
    interactive: bool,
    report_path: Option<&Path>,
    classify: Option<&Path>,
) -> Result<(), CliError> {
    let bundle: AnalysisBundle = read_json(bundle_path)?;
    let dir = TracesDir::new(traces);
    let (plan, store, layout) = build_plan(&bundle, &dir, store_path, classify)?;

    let needs_decisions = plan
        .fs
        .iter()
        .any(|a| matches!(a, rewind_core::FsAction::Interactive { .. }));
    let mut scripted: ScriptedDecisions = match decisions {
        Some(path) => {
            let records: Vec<DecisionRecord> = read_json(path)?;
            ScriptedDecisions {
                decisions: records.into_iter().map(|r| (r.path, r.choice)).collect(),
            }
        }
        None => ScriptedDecisions::default(),
    };
    if needs_decisions && decisions.is_none() && !interactive {
        return Err(CliError::Usage(
            "plan contains interactive actions; pass --interactive or --decisions FILE".into(),
        ));
    }

    let db_result = execute_db_recovery(&plan.db)?;
    let mut prompt = PromptProvider;
    let provider: &mut dyn DecisionProvider = if interactive && decisions.is_none() {
        &mut prompt
    } else {
        &mut scripted
    };
    let (tree, choices) =
        execute_fs_recovery(&plan.fs, &store.tree, &store.chain, &store.baseline, provider)?;

    let restored = compute_restored_sets(
        &bundle.request_ops(),
        &bundle.malicious_ids,
        &plan.db,
        &plan.fs,
        &choices,
    );

    Store::swap_live_state(&layout, &db_result.state, &tree)
        .map_err(|e| CliError::Invariant(e.to_string()))?;

    let report = RecoveryReport {
        baseline_ts: plan.db.baseline.ts,
        db_replayed: plan.db.replay.len(),
        db_filtered: plan.db.filtered,
        fs_actions: plan.fs.len(),
        dependency_warnings: db_result.dependency_warnings.len(),
        interactive_choices: choices,
        recovered_db_hash: db_result.state.state_hash(),
        recovered_tree_hash: tree.tree_hash(),
        restored,
    };
    let report_file = report_path
        .map(Path::to_path_buf)
        .unwrap_or(dir.recovery_report());
    write_text(&report_file, &to_canonical_json(&report))?;
    eprintln!(
        "recovered: {} db ops replayed ({} filtered), {} file actions, {} dependency warnings → {}",
        report.db_replayed,
        report.db_filtered,
        report.fs_actions,
        report.dependency_warnings,
        report_file.display()
    );
    Ok(())
}

pub fn report(
    bundle_path: &Path,
    ground_truth_path: &Path,
    recovery: Option<&Path>,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let bundle: AnalysisBundle = read_json(bundle_path)?;
    let truth: GroundTruth = read_json(ground_truth_path)?;
    let mut metrics = attribution_metrics(&bundle, &truth);
    if let Some(recovery_path) = recovery {
        let recovery_report: RecoveryReport = read_json(recovery_path)?;
        let accuracy = compute_recovery_accuracy(&recovery_report.restored, &truth.q)?;
        metrics.recovery_accuracy = Some(accuracy);
    }
    let json = to_canonical_json(&metrics);
    match format {
        OutputFormat::Json => outln!("{json}"),
        OutputFormat::Table => out!("{}", render_table(&metrics)),
    }
    if let Some(path) = out {
        write_text(path, &json)?;
    }
    Ok(())
}
