//! `rewind` — per-request trace attribution and surgical state recovery.
//!
//! Two-phase operator workflow: `analyze` writes an auditable bundle of
//! per-request findings, `plan` renders the recovery plan for review, and
//! `recover` executes it copy-aside with an atomic swap. `simulate` and
//! `report` close the loop for evaluation on ground-truth workloads.
//!
//! Exit codes: 0 ok, 2 usage/parse error, 3 recovery-precondition failure,
//! 4 internal invariant violation.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rewind",
    version,
    about = "Reconstruct per-request file and database modifications from syscall traces, \
             then rewind and selectively replay only legitimate operations"
)]
struct Args {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth-labeled workload scenario.
    Simulate {
        /// Scenario config file (canonical JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for traces, logs, ground truth, and the store.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split a web-host trace into per-request syscall units.
    Partition {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: OutputFormat,
    },
    /// Emit one request's provenance graph as line-delimited JSON.
    Trace {
        #[arg(long)]
        traces: PathBuf,
        /// Request id to trace.
        #[arg(long)]
        request: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show one request's anchors and extracted database operations.
    Attribute {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        request: String,
        /// Database endpoints as ip:port, comma separated.
        #[arg(long, value_delimiter = ',')]
        db_endpoints: Vec<String>,
        #[arg(long, value_enum, default_value = "json")]
        format: OutputFormat,
    },
    /// Run the full pipeline and write the analysis bundle.
    Analyze {
        #[arg(long)]
        traces: PathBuf,
        /// Malicious request ids, comma separated.
        #[arg(long, value_delimiter = ',')]
        malicious: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        db_endpoints: Vec<String>,
    },
    /// Compute and write the recovery plan for audit.
    Plan {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Store directory (defaults to <traces>/store).
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory classification override file.
        #[arg(long)]
        classify: Option<PathBuf>,
    },
    /// Execute recovery against the store (copy-aside, atomic swap).
    Recover {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Scripted decisions file for interactive actions.
        #[arg(long, conflicts_with = "interactive")]
        decisions: Option<PathBuf>,
        /// Prompt on stdin for each interactive action.
        #[arg(long)]
        interactive: bool,
        /// Where to write the recovery report (defaults to
        /// <traces>/recovery_report.json).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        classify: Option<PathBuf>,
    },
    /// Score attribution (and optionally recovery) against ground truth.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Recovery report to score under the strict accuracy criterion.
        #[arg(long)]
        recovery: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: OutputFormat,
        /// Write the canonical JSON report here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = match args.cmd {
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed),
        Command::Partition { traces, format } => commands::partition(&traces, format),
        Command::Trace {
            traces,
            request,
            out,
        } => commands::trace(&traces, &request, out.as_deref()),
        Command::Attribute {
            traces,
            request,
            db_endpoints,
            format,
        } => commands::attribute(&traces, &request, &db_endpoints, format),
        Command::Analyze {
            traces,
            malicious,
            out,
            db_endpoints,
        } => commands::analyze(&traces, &malicious, &out, &db_endpoints),
        Command::Plan {
            bundle,
            traces,
            store,
            out,
            classify,
        } => commands::plan(&bundle, &traces, store.as_deref(), &out, classify.as_deref()),
        Command::Recover {
            bundle,
            traces,
            store,
            decisions,
            interactive,
            report,
            classify,
        } => commands::recover(
            &bundle,
            &traces,
            store.as_deref(),
            decisions.as_deref(),
            interactive,
            report.as_deref(),
            classify.as_deref(),
        ),
        Command::Report {
            bundle,
            ground_truth,
            recovery,
            format,
            out,
        } => commands::report(
            &bundle,
            &ground_truth,
            recovery.as_deref(),
            format,
            out.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("rewind: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
