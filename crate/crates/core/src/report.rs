//! Versioned, machine-readable reports plus the delimited side files.
//!
//! All JSON emission goes through serde with struct field order and
//! sorted-map keys, so identical runs produce byte-identical reports.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineOutcome;
use crate::entropy::{EntropyStats, MwuResult};
use crate::error::{Error, Result};
use crate::eval::{LopoOutcome, PatchPosterior, Verdict};
use crate::pipeline::Author;
use crate::train::EpochLog;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub held_out_painting: String,
    pub held_out_author: Author,
    pub patch_accuracy: f64,
    pub balanced_accuracy: f64,
    pub per_class_recall: [Option<f64>; 3],
    pub per_class_precision: [Option<f64>; 3],
    pub confusion: [[u64; 3]; 3],
    pub painting_vote: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VoteReport {
    pub painting_id: String,
    pub author: Author,
    pub verdict: Verdict,
    pub correct: bool,
}

/// The cross-validation report schema shared by the CNN and the baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValReport {
    pub schema_version: u32,
    pub method: String,
    /// Fully resolved run configuration, echoed for reproducibility.
    pub run_config: serde_json::Value,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub balanced_accuracy_pooled: f64,
    pub balanced_accuracy_fold_mean: f64,
    pub majority_vote_accuracy: f64,
    pub confusion_raw: [[u64; 3]; 3],
    pub confusion_row_normalized: [[f64; 3]; 3],
    pub folds: Vec<FoldReport>,
    pub votes: Vec<VoteReport>,
}

pub fn build_crossval_report(
    outcome: &LopoOutcome,
    run_config: serde_json::Value,
) -> CrossValReport {
    let folds = outcome
        .folds
        .iter()
        .map(|f| FoldReport {
            fold_id: f.fold_id,
            held_out_painting: f.held_out_painting.clone(),
            held_out_author: f.held_out_author,
            patch_accuracy: f.metrics.accuracy,
            balanced_accuracy: f.metrics.balanced_accuracy,
            per_class_recall: f.metrics.per_class_recall,
            per_class_precision: f.metrics.per_class_precision,
            confusion: f.metrics.confusion.counts,
            painting_vote: f.painting_vote,
            best_epoch: Some(f.best_epoch),
            best_val_accuracy: Some(f.best_val_accuracy),
            final_val_accuracy: Some(f.final_val_accuracy),
        })
        .collect();
    let votes = outcome
        .folds
        .iter()
        .map(|f| VoteReport {
            painting_id: f.held_out_painting.clone(),
            author: f.held_out_author,
            verdict: f.painting_vote,
            correct: f.painting_vote.matches(f.held_out_author),
        })
        .collect();
    CrossValReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: "cnn".into(),
        run_config,
        mean_accuracy: outcome.aggregates.mean_accuracy,
        std_accuracy: outcome.aggregates.std_accuracy,
        balanced_accuracy_pooled: outcome.aggregates.balanced_accuracy_pooled,
        balanced_accuracy_fold_mean: outcome.aggregates.balanced_accuracy_fold_mean,
        majority_vote_accuracy: outcome.aggregates.majority_vote_accuracy,
        confusion_raw: outcome.aggregates.confusion_raw.counts,
        confusion_row_normalized: outcome.aggregates.confusion_row_normalized,
        folds,
        votes,
    }
}

pub fn build_baseline_report(
    outcome: &BaselineOutcome,
    run_config: serde_json::Value,
) -> CrossValReport {
    let folds = outcome
        .folds
        .iter()
        .map(|f| FoldReport {
            fold_id: f.fold_id,
            held_out_painting: f.held_out_painting.clone(),
            held_out_author: f.held_out_author,
            patch_accuracy: f.metrics.accuracy,
            balanced_accuracy: f.metrics.balanced_accuracy,
            per_class_recall: f.metrics.per_class_recall,
            per_class_precision: f.metrics.per_class_precision,
            confusion: f.metrics.confusion.counts,
            painting_vote: f.painting_vote,
            best_epoch: None,
            best_val_accuracy: None,
            final_val_accuracy: None,
        })
        .collect();
    let votes = outcome
        .folds
        .iter()
        .map(|f| VoteReport {
            painting_id: f.held_out_painting.clone(),
            author: f.held_out_author,
            verdict: f.painting_vote,
            correct: f.painting_vote.matches(f.held_out_author),
        })
        .collect();
    CrossValReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: "lbp_rf".into(),
        run_config,
        mean_accuracy: outcome.aggregates.mean_accuracy,
        std_accuracy: outcome.aggregates.std_accuracy,
        balanced_accuracy_pooled: outcome.aggregates.balanced_accuracy_pooled,
        balanced_accuracy_fold_mean: outcome.aggregates.balanced_accuracy_fold_mean,
        majority_vote_accuracy: outcome.aggregates.majority_vote_accuracy,
        confusion_raw: outcome.aggregates.confusion_raw.counts,
        confusion_row_normalized: outcome.aggregates.confusion_row_normalized,
        folds,
        votes,
    }
}

/// One entropy group (pure-human, pure-robot, pooled pure, annotated
/// hybrid) alongside the statistical tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyReport {
    pub schema_version: u32,
    pub run_config: serde_json::Value,
    pub tau: f64,
    pub groups: Vec<EntropyGroup>,
    pub tests: Vec<MwuReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyGroup {
    pub name: String,
    pub stats: EntropyStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MwuReport {
    pub comparison: String,
    pub n_a: usize,
    pub n_b: usize,
    pub u: f64,
    pub p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_exact: Option<f64>,
    pub p_normal: f64,
}

impl MwuReport {
    pub fn new(comparison: &str, n_a: usize, n_b: usize, result: &MwuResult) -> Self {
        MwuReport {
            comparison: comparison.into(),
            n_a,
            n_b,
            u: result.u,
            p: result.p,
            p_exact: result.p_exact,
            p_normal: result.p_normal,
        }
    }
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: format!("JSON does not parse: {e}"),
    })
}

/// Confusion matrices as tab-delimited grids with header rows.
pub fn write_confusion_tsv(
    path: &Path,
    raw: &[[u64; 3]; 3],
    normalized: &[[f64; 3]; 3],
) -> Result<()> {
    let classes = ["blank", "human", "robot"];
    let mut out = String::new();
    out.push_str("# raw counts: rows = true class, columns = predicted\n");
    out.push_str("true\\pred\tblank\thuman\trobot\n");
    for (r, row) in raw.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", classes[r], row[0], row[1], row[2]));
    }
    out.push_str("# row-normalized\n");
    out.push_str("true\\pred\tblank\thuman\trobot\n");
    for (r, row) in normalized.iter().enumerate() {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            classes[r], row[0], row[1], row[2]
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_posteriors(path: &Path, posteriors: &[PatchPosterior]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for posterior in posteriors {
        let line = serde_json::to_string(posterior).expect("posteriors serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_posteriors(path: &Path) -> Result<Vec<PatchPosterior>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut posteriors = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let posterior: PatchPosterior =
            serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("posterior line {}: {e}", lineno + 1),
            })?;
        posteriors.push(posterior);
    }
    Ok(posteriors)
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for entry in log {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Short human-readable summary next to the machine-readable report.
pub fn render_summary(report: &CrossValReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "method: {}\nfolds: {}\n",
        report.method,
        report.folds.len()
    ));
    out.push_str(&format!(
        "patch accuracy: {:.2}% +/- {:.2}%\n",
        report.mean_accuracy * 100.0,
        report.std_accuracy * 100.0
    ));
    out.push_str(&format!(
        "balanced accuracy (pooled): {:.2}%\nbalanced accuracy (fold mean): {:.2}%\n",
        report.balanced_accuracy_pooled * 100.0,
        report.balanced_accuracy_fold_mean * 100.0
    ));
    out.push_str(&format!(
        "majority-vote painting accuracy: {:.2}% ({} of {})\n",
        report.majority_vote_accuracy * 100.0,
        report.votes.iter().filter(|v| v.correct).count(),
        report.votes.len()
    ));
    out.push_str("per-fold accuracy:\n");
    for fold in &report.folds {
        out.push_str(&format!(
            "  fold {:>2}  {:<24} {:>7.2}%  vote {}\n",
            fold.fold_id,
            fold.held_out_painting,
            fold.patch_accuracy * 100.0,
            fold.painting_vote.name()
        ));
    }
    out
}
