//! `calibrate`, `evaluate`, `split` and `roc-export`: score files in,
//! metric reports and split assignments out.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use radlabel::eval::split::{stratified_split, SplitAssignment, Split};
use radlabel::eval::{evaluate, roc_and_eer, ScoredSet};
use radlabel::gateway::read_label_records;
use radlabel::num::derive_seed;
use radlabel::synthetic::read_truth;

use crate::common::{
    load_scored_set, load_truth_map, scored_set_from_labels, write_json_report, write_roc_curve,
    CalibrationReport, JoinCounts, MetricsReport,
};
use crate::config::{ConfigError, RunConfig};
use crate::manifest::RunTracker;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Label records produced by `label`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Ground-truth file joined on (id, level).
    #[arg(long)]
    pub truth: PathBuf,
    /// Restrict to one IVD level.
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long, default_value = "calibration.json")]
    pub out: PathBuf,
}

pub fn run_calibrate(args: &CalibrateArgs) -> anyhow::Result<()> {
    let truth = load_truth_map(&args.truth)?;
    let (set, join) = load_scored_set(&args.scores, &truth, args.level.as_deref())?;
    let roc = roc_and_eer(&set)?;

    let effective = serde_json::json!({
        "scores": args.scores.display().to_string(),
        "truth": args.truth.display().to_string(),
        "level": args.level,
    });
    let mut tracker = RunTracker::new("calibrate", &effective, 0)?;
    let report = CalibrationReport::new(&roc, set.counts(), join);
    write_json_report(&args.out, &report)?;
    tracker.record_output(&args.out);
    let manifest = tracker.finish(&args.out)?;
    println!(
        "auroc {:.6}  eer {:.6}  threshold {:.6} -> {}",
        roc.auroc,
        roc.eer,
        roc.eer_threshold,
        args.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Calibration label records (threshold source).
    #[arg(long, conflicts_with_all = ["labels", "splits"])]
    pub calibration: Option<PathBuf>,
    /// Test label records (metrics target).
    #[arg(long, requires = "calibration", conflicts_with_all = ["labels", "splits"])]
    pub test: Option<PathBuf>,
    /// One label file covering both splits; requires --splits.
    #[arg(long, requires = "splits")]
    pub labels: Option<PathBuf>,
    /// Assignment file from `split` selecting calibration vs test records.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

fn split_scored_sets(
    labels_path: &Path,
    splits_path: &Path,
    truth: &crate::common::TruthMap,
    level: Option<&str>,
) -> anyhow::Result<(ScoredSet<f64>, ScoredSet<f64>, JoinCounts)> {
    let assignment = SplitAssignment::read(splits_path)?;
    let records = read_label_records(labels_path)
        .with_context(|| format!("reading label file `{}`", labels_path.display()))?;
    let pick = |wanted: Split| -> Vec<radlabel::LabelRecord> {
        records
            .iter()
            .filter(|r| assignment.get(&r.report_id) == Some(wanted))
            .cloned()
            .collect()
    };
    let (calibration, join_cal) =
        scored_set_from_labels(&pick(Split::Calibration), truth, level)?;
    let (test, join_test) = scored_set_from_labels(&pick(Split::Test), truth, level)?;
    let join = JoinCounts {
        n_unjoined: join_cal.n_unjoined + join_test.n_unjoined,
        n_error_records: join_cal.n_error_records + join_test.n_error_records,
    };
    Ok((calibration, test, join))
}

pub fn run_evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let truth = load_truth_map(&args.truth)?;
    let level = args.level.as_deref();
    let (calibration, test, join) = match (&args.calibration, &args.test, &args.labels, &args.splits)
    {
        (Some(cal), Some(test), None, None) => {
            let (cal_set, join_cal) = load_scored_set(cal, &truth, level)?;
            let (test_set, join_test) = load_scored_set(test, &truth, level)?;
            (
                cal_set,
                test_set,
                JoinCounts {
                    n_unjoined: join_cal.n_unjoined + join_test.n_unjoined,
                    n_error_records: join_cal.n_error_records + join_test.n_error_records,
                },
            )
        }
        (None, None, Some(labels), Some(splits)) => {
            split_scored_sets(labels, splits, &truth, level)?
        }
        _ => {
            return Err(ConfigError(vec![
                "evaluate needs either --calibration with --test, or --labels with --splits"
                    .to_string(),
            ])
            .into())
        }
    };

    let metrics = evaluate(&test, &calibration)?;
    let effective = serde_json::json!({
        "calibration": args.calibration.as_ref().map(|p| p.display().to_string()),
        "test": args.test.as_ref().map(|p| p.display().to_string()),
        "labels": args.labels.as_ref().map(|p| p.display().to_string()),
        "splits": args.splits.as_ref().map(|p| p.display().to_string()),
        "truth": args.truth.display().to_string(),
        "level": args.level,
    });
    let mut tracker = RunTracker::new("evaluate", &effective, 0)?;

    #[derive(serde::Serialize)]
    struct EvaluateReport {
        #[serde(flatten)]
        metrics: MetricsReport,
        calibration_n: usize,
        calibration_n_pos: usize,
        calibration_n_neg: usize,
        #[serde(flatten)]
        join: JoinCounts,
    }
    let (cal_pos, cal_neg) = calibration.counts();
    let report = EvaluateReport {
        metrics: MetricsReport::from(&metrics),
        calibration_n: calibration.len(),
        calibration_n_pos: cal_pos,
        calibration_n_neg: cal_neg,
        join,
    };
    write_json_report(&args.out, &report)?;
    tracker.record_output(&args.out);
    let manifest = tracker.finish(&args.out)?;
    println!(
        "auroc {:.6}  eer {:.6}  bal-acc {:.6}  f1 {:.6} -> {}",
        metrics.auroc,
        metrics.eer,
        metrics.balanced_accuracy,
        metrics.f1,
        args.out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Ground-truth file providing the ids and labels to stratify on
    /// (scan-level entries only).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "splits.tsv")]
    pub out: PathBuf,
}

pub fn run_split(args: &SplitArgs) -> anyhow::Result<()> {
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    config.validate()?;
    let fraction = args.fraction.unwrap_or(config.split.fraction);
    let seed = args
        .seed
        .or(config.split.seed)
        .unwrap_or_else(|| derive_seed(config.seed, "split"));

    let truth = read_truth(&args.truth)
        .with_context(|| format!("reading truth file `{}`", args.truth.display()))?;
    let ids: Vec<String> = truth.iter().map(|(id, _)| id.clone()).collect();
    let labels: Vec<bool> = truth.iter().map(|(_, l)| *l).collect();
    let assignment = stratified_split(&ids, &labels, fraction, seed)?;

    let out = config.resolve_output(&args.out)?;
    let effective = serde_json::json!({
        "truth": args.truth.display().to_string(),
        "fraction": fraction,
        "seed": seed,
    });
    let mut tracker = RunTracker::new("split", &effective, seed)?;
    assignment.write(&out)?;
    tracker.record_output(&out);
    let manifest = tracker.finish(&out)?;
    let (cal, test) = assignment.counts();
    println!(
        "assigned {cal} calibration / {test} test -> {}",
        out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct RocExportArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long, default_value = "roc.tsv")]
    pub out: PathBuf,
}

pub fn run_roc_export(args: &RocExportArgs) -> anyhow::Result<()> {
    let truth = load_truth_map(&args.truth)?;
    let (set, _join) = load_scored_set(&args.scores, &truth, args.level.as_deref())?;
    let roc = roc_and_eer(&set)?;
    let effective = serde_json::json!({
        "scores": args.scores.display().to_string(),
        "truth": args.truth.display().to_string(),
        "level": args.level,
    });
    let mut tracker = RunTracker::new("roc-export", &effective, 0)?;
    write_roc_curve(&args.out, &roc)?;
    tracker.record_output(&args.out);
    let manifest = tracker.finish(&args.out)?;
    println!("{} ROC point(s) -> {}", roc.points.len(), args.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}
