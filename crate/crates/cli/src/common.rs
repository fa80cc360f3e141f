//! Shared plumbing for the metric-producing subcommands: joining label
//! records against ground truth, and the 6-decimal metrics report file.

use std::collections::HashMap;
use std::path::Path;

use anyhow::Context;
use radlabel::eval::{MetricsBundle, RocAnalysis, ScoredItem, ScoredSet};
use radlabel::gateway::{read_label_records, LabelRecord};
use radlabel::synthetic::read_truth_records;
use serde::Serialize;
use serde_json::value::RawValue;

/// Ground truth keyed by (id, level).
pub type TruthMap = HashMap<(String, Option<String>), bool>;

pub fn load_truth_map(path: &Path) -> anyhow::Result<TruthMap> {
    let records = read_truth_records(path)
        .with_context(|| format!("reading truth file `{}`", path.display()))?;
    let mut map = TruthMap::new();
    for record in records {
        let key = (record.id.clone(), record.level.clone());
        if map.insert(key, record.label != 0).is_some() {
            anyhow::bail!(
                "duplicate truth entry for id `{}` level `{}`",
                record.id,
                record.level.as_deref().unwrap_or("-")
            );
        }
    }
    Ok(map)
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct JoinCounts {
    /// Scored records with no matching truth entry (inference beyond the
    /// labelled subset); they are excluded from the metrics.
    pub n_unjoined: usize,
    /// Records carrying an error instead of a score.
    pub n_error_records: usize,
}

/// Joins scored label records with ground truth. `level` restricts the
/// set to one IVD level; ids are suffixed `#level` for level-granular
/// records so they stay unique.
pub fn scored_set_from_labels(
    records: &[LabelRecord],
    truth: &TruthMap,
    level: Option<&str>,
) -> anyhow::Result<(ScoredSet<f64>, JoinCounts)> {
    let mut items = Vec::new();
    let mut counts = JoinCounts::default();
    for record in records {
        if let Some(wanted) = level {
            if record.level.as_deref() != Some(wanted) {
                continue;
            }
        }
        let Some(p_yes) = record.p_yes else {
            counts.n_error_records += 1;
            continue;
        };
        let key = (record.report_id.clone(), record.level.clone());
        let Some(&label) = truth.get(&key) else {
            counts.n_unjoined += 1;
            continue;
        };
        let id = match &record.level {
            Some(l) => format!("{}#{l}", record.report_id),
            None => record.report_id.clone(),
        };
        items.push(ScoredItem {
            id,
            score: p_yes,
            label,
        });
    }
    Ok((ScoredSet::new(items)?, counts))
}

pub fn load_scored_set(
    labels_path: &Path,
    truth: &TruthMap,
    level: Option<&str>,
) -> anyhow::Result<(ScoredSet<f64>, JoinCounts)> {
    let records = read_label_records(labels_path)
        .with_context(|| format!("reading label file `{}`", labels_path.display()))?;
    scored_set_from_labels(&records, truth, level)
}

/// A JSON number with exactly six decimal places (null when non-finite,
/// which only happens for infinite sentinel thresholds).
pub fn dp6(value: f64) -> Box<RawValue> {
    let text = if value.is_finite() {
        format!("{value:.6}")
    } else {
        "null".to_string()
    };
    RawValue::from_string(text).expect("formatted number is valid JSON")
}

#[derive(Serialize)]
pub struct CalibrationReport {
    pub auroc: Box<RawValue>,
    pub eer: Box<RawValue>,
    pub eer_threshold: Box<RawValue>,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(flatten)]
    pub join: JoinCounts,
}

impl CalibrationReport {
    pub fn new(roc: &RocAnalysis<f64>, counts: (usize, usize), join: JoinCounts) -> Self {
        CalibrationReport {
            auroc: dp6(roc.auroc),
            eer: dp6(roc.eer),
            eer_threshold: dp6(roc.eer_threshold),
            n: counts.0 + counts.1,
            n_pos: counts.0,
            n_neg: counts.1,
            join,
        }
    }
}

#[derive(Serialize)]
pub struct MetricsReport {
    pub auroc: Box<RawValue>,
    pub eer: Box<RawValue>,
    pub eer_threshold: Box<RawValue>,
    pub balanced_accuracy: Box<RawValue>,
    pub f1: Box<RawValue>,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl From<&MetricsBundle<f64>> for MetricsReport {
    fn from(m: &MetricsBundle<f64>) -> Self {
        MetricsReport {
            auroc: dp6(m.auroc),
            eer: dp6(m.eer),
            eer_threshold: dp6(m.eer_threshold),
            balanced_accuracy: dp6(m.balanced_accuracy),
            f1: dp6(m.f1),
            n: m.n,
            n_pos: m.n_pos,
            n_neg: m.n_neg,
        }
    }
}

pub fn write_json_report(path: &Path, report: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing report `{}`", path.display()))?;
    Ok(())
}

/// Two-column ROC curve file for external plotting.
pub fn write_roc_curve(path: &Path, roc: &RocAnalysis<f64>) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = String::from("# fpr tpr\n");
    for point in &roc.points {
        out.push_str(&format!("{:.6} {:.6}\n", point.fpr, point.tpr));
    }
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating roc file `{}`", path.display()))?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
