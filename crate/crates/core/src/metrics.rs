//! Attribution and recovery quality metrics.
//!
//! Precision = TP/(TP+FP), recall = TP/(TP+FN), F1 their harmonic mean.
//! Attribution is scored over (request, operation) pairs against ground
//! truth labels; recovery accuracy is the strict per-request set-equality
//! criterion computed by the recovery module.

use crate::analysis::AnalysisBundle;
use crate::provenance::FileOpKind;
use crate::sim::GroundTruth;
use crate::trace::Ns;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl CategoryMetrics {
    /// Empty categories score perfect: nothing to find, nothing found.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> CategoryMetrics {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        CategoryMetrics {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricCounts {
    pub requests: usize,
    pub db_ops_attributed: usize,
    pub db_ops_truth: usize,
    pub file_ops_attributed: usize,
    pub file_ops_truth: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub db: CategoryMetrics,
    pub file: CategoryMetrics,
    pub recovery_accuracy: Option<f64>,
    pub counts: MetricCounts,
    /// Wall-clock stage timings; excluded from serialization so report
    /// files stay byte-stable across runs.
    #[serde(skip)]
    pub timings_ms: BTreeMap<String, u64>,
}

type DbPair = (String, Ns, String);
type FilePair = (String, Ns, String, FileOpKind, u64);

/// Score a bundle's attribution against ground truth.
pub fn attribution_metrics(bundle: &AnalysisBundle, truth: &GroundTruth) -> MetricsReport {
    let attributed_db: BTreeSet<DbPair> = bundle
        .requests
        .iter()
        .flat_map(|(rid, ra)| {
            ra.db_ops
                .iter()
                .map(move |op| (rid.clone(), op.ts, op.statement.clone()))
        })
        .collect();
    let truth_db: BTreeSet<DbPair> = truth
        .db_op_labels
        .iter()
        .map(|l| (l.request_id.clone(), l.ts, l.statement.clone()))
        .collect();

    let attributed_file: BTreeSet<FilePair> = bundle
        .requests
        .iter()
        .flat_map(|(rid, ra)| {
            ra.file_ops.iter().map(move |op| {
                (
                    rid.clone(),
                    op.ts,
                    op.path.clone(),
                    op.kind,
                    op.payload.as_ref().map(|p| p.offset).unwrap_or(0),
                )
            })
        })
        .collect();
    let truth_file: BTreeSet<FilePair> = truth
        .file_op_labels
        .iter()
        .map(|l| (l.request_id.clone(), l.ts, l.path.clone(), l.kind, l.offset))
        .collect();

    let db_tp = attributed_db.intersection(&truth_db).count();
    let file_tp = attributed_file.intersection(&truth_file).count();

    MetricsReport {
        db: CategoryMetrics::from_counts(
            db_tp,
            attributed_db.len() - db_tp,
            truth_db.len() - db_tp,
        ),
        file: CategoryMetrics::from_counts(
            file_tp,
            attributed_file.len() - file_tp,
            truth_file.len() - file_tp,
        ),
        recovery_accuracy: None,
        counts: MetricCounts {
            requests: bundle.requests.len(),
            db_ops_attributed: attributed_db.len(),
            db_ops_truth: truth_db.len(),
            file_ops_attributed: attributed_file.len(),
            file_ops_truth: truth_file.len(),
        },
        timings_ms: BTreeMap::new(),
    }
}

/// Render the human-readable table form.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str("category   precision  recall     f1         tp/fp/fn\n");
    for (name, m) in [("db", &report.db), ("file", &report.file)] {
        out.push_str(&format!(
            "{name:<10} {:<10.6} {:<10.6} {:<10.6} {}/{}/{}\n",
            m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_
        ));
    }
    match report.recovery_accuracy {
        Some(acc) => out.push_str(&format!("recovery accuracy: {acc:.6}\n")),
        None => out.push_str("recovery accuracy: n/a (no recovery outcome supplied)\n"),
    }
    out.push_str(&format!(
        "requests: {}  db ops (attributed/truth): {}/{}  file ops: {}/{}\n",
        report.counts.requests,
        report.counts.db_ops_attributed,
        report.counts.db_ops_truth,
        report.counts.file_ops_attributed,
        report.counts.file_ops_truth,
    ));
    for (stage, ms) in &report.timings_ms {
        out.push_str(&format!("stage {stage}: {ms} ms\n"));
    }
    out
}
