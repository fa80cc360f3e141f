//! `train-svm` and `predict-svm`: classifier training over embedding
//! files and batch scoring with a saved model.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use radlabel::condition::Granularity;
use radlabel::gateway::read_label_records;
use radlabel::svm::io::{group_bags, load_model, read_embeddings, save_model, SavedModel};
use radlabel::svm::pipeline::{train_condition_classifier, DataSplit, LabelKey};
use radlabel::svm::solver::SvmParams;
use radlabel::svm::{bag_embed, decision_scores};
use radlabel::eval::split::SplitFile;
use radlabel::num::derive_seed;
use radlabel::synthetic::read_truth_records;

use crate::common::{write_json_report, MetricsReport};
use crate::config::{ConfigError, RunConfig};
use crate::manifest::RunTracker;

#[derive(Debug, Args)]
pub struct TrainSvmArgs {
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Embedding file (falls back to the config's classifier.embeddings).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Supervision: label records from `label`, or a ground-truth file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Three-way assignment file with train/validation/test names.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Configured condition supplying granularity and levels.
    #[arg(long)]
    pub condition: String,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_passes: Option<usize>,
    #[arg(long)]
    pub svm_seed: Option<u64>,
    #[arg(long)]
    pub class_weight: bool,
    #[arg(long, default_value = "model.svm")]
    pub out_model: PathBuf,
    #[arg(long, default_value = "metrics_validation.json")]
    pub out_validation: PathBuf,
    #[arg(long, default_value = "metrics_test.json")]
    pub out_test: PathBuf,
}

/// Reads supervision from either file shape: label records keep scored
/// entries only (error records are dropped), truth files are taken as-is.
fn load_supervision(path: &Path) -> anyhow::Result<HashMap<LabelKey, bool>> {
    let mut map = HashMap::new();
    let insert = |map: &mut HashMap<LabelKey, bool>,
                  id: String,
                  level: Option<String>,
                  value: bool|
     -> anyhow::Result<()> {
        let key = LabelKey { id, level };
        if map.insert(key.clone(), value).is_some() {
            anyhow::bail!(
                "duplicate supervision for id `{}` level `{}`",
                key.id,
                key.level.as_deref().unwrap_or("-")
            );
        }
        Ok(())
    };
    if let Ok(records) = read_label_records(path) {
        if !records.is_empty() {
            for record in records {
                if let Some(label) = record.label {
                    insert(&mut map, record.report_id, record.level, label != 0)?;
                }
            }
            return Ok(map);
        }
    }
    let records = read_truth_records(path)
        .with_context(|| format!("reading supervision `{}`", path.display()))?;
    for record in records {
        insert(&mut map, record.id, record.level, record.label != 0)?;
    }
    Ok(map)
}

fn load_splits(path: &Path) -> anyhow::Result<HashMap<String, DataSplit>> {
    let file = SplitFile::read(path)?;
    let mut map = HashMap::new();
    for (id, name) in file.entries {
        let split = DataSplit::parse(&name).ok_or_else(|| {
            ConfigError(vec![format!(
                "split file `{}`: unknown split `{name}` for id `{id}` \
                 (expected train/validation/test)",
                path.display()
            )])
        })?;
        map.insert(id, split);
    }
    Ok(map)
}

pub fn run_train(args: &TrainSvmArgs) -> anyhow::Result<()> {
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    config.validate()?;
    let cond = config.condition(&args.condition)?.clone();

    let require = |flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str| {
        flag.clone().or_else(|| fallback.clone()).ok_or_else(|| {
            ConfigError(vec![format!(
                "no {name} file given (pass --{name} or set classifier.{name} in the config)"
            )])
        })
    };
    let embeddings_path = require(&args.embeddings, &config.classifier.embeddings, "embeddings")?;
    let labels_path = require(&args.labels, &config.classifier.labels, "labels")?;
    let splits_path = require(&args.splits, &config.classifier.splits, "splits")?;

    let params = SvmParams {
        c: args.c.unwrap_or(config.svm.c),
        tolerance: args.tolerance.unwrap_or(config.svm.tolerance),
        max_passes: args.max_passes.unwrap_or(config.svm.max_passes),
        seed: args
            .svm_seed
            .or(config.svm.seed)
            .unwrap_or_else(|| derive_seed(config.seed, "svm")),
        balance_classes: args.class_weight || config.svm.class_weight,
    };

    let instances = read_embeddings(&embeddings_path)
        .with_context(|| format!("reading embeddings `{}`", embeddings_path.display()))?;
    let bags = group_bags(instances)?;
    let labels = load_supervision(&labels_path)?;
    let splits = load_splits(&splits_path)?;

    let out_model = config.resolve_output(&args.out_model)?;
    let out_validation = config.resolve_output(&args.out_validation)?;
    let out_test = config.resolve_output(&args.out_test)?;
    let effective = serde_json::json!({
        "config": &config,
        "condition": cond.name,
        "embeddings": embeddings_path.display().to_string(),
        "labels": labels_path.display().to_string(),
        "splits": splits_path.display().to_string(),
        "c": params.c,
        "tolerance": params.tolerance,
        "max_passes": params.max_passes,
        "svm_seed": params.seed,
        "class_weight": params.balance_classes,
    });
    let mut tracker = RunTracker::new("train-svm", &effective, params.seed)?;

    let run = train_condition_classifier(
        &bags,
        &labels,
        &cond,
        &splits,
        &params,
        config.svm.max_unjoined_fraction,
    )?;

    save_model(
        &out_model,
        &SavedModel {
            model: run.model.clone(),
            granularity: cond.granularity,
            levels: cond.levels.clone(),
        },
    )?;
    tracker.record_output(&out_model);
    write_json_report(&out_validation, &MetricsReport::from(&run.validation))?;
    tracker.record_output(&out_validation);
    write_json_report(&out_test, &MetricsReport::from(&run.test))?;
    tracker.record_output(&out_test);
    let manifest = tracker.finish(&out_model)?;

    println!(
        "trained on {} labels ({} unmatched, {} unlabelled rows)",
        run.join.labels_total, run.join.labels_unmatched, run.join.rows_unlabelled
    );
    println!(
        "validation auroc {:.6}  test auroc {:.6}  test bal-acc {:.6}",
        run.validation.auroc, run.test.auroc, run.test.balanced_accuracy
    );
    println!("model: {}", out_model.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictSvmArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value = "svm_scores.jsonl")]
    pub out: PathBuf,
}

#[derive(serde::Serialize)]
struct ScoreRecord<'a> {
    id: &'a str,
    level: Option<&'a str>,
    score: f64,
}

pub fn run_predict(args: &PredictSvmArgs) -> anyhow::Result<()> {
    let saved: SavedModel<f64> = load_model(&args.model)?;
    let instances = read_embeddings(&args.embeddings)
        .with_context(|| format!("reading embeddings `{}`", args.embeddings.display()))?;
    let bags = group_bags(instances)?;

    let mut keys: Vec<(String, Option<String>)> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    match saved.granularity {
        Granularity::ScanLevel => {
            for bag in &bags {
                keys.push((bag.bag_id.clone(), None));
                rows.push(bag_embed(bag)?);
            }
        }
        Granularity::IvdLevel => {
            let wanted: Vec<&str> = saved
                .levels
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(String::as_str)
                .collect();
            for bag in &bags {
                for inst in &bag.instances {
                    let Some(level) = inst.level.as_deref() else {
                        continue;
                    };
                    if !wanted.is_empty() && !wanted.contains(&level) {
                        continue;
                    }
                    keys.push((bag.bag_id.clone(), Some(level.to_string())));
                    rows.push(inst.vector.iter().map(|&v| f64::from(v)).collect());
                }
            }
        }
    }
    let scores = decision_scores(&saved.model, &rows)?;

    let effective = serde_json::json!({
        "model": args.model.display().to_string(),
        "embeddings": args.embeddings.display().to_string(),
    });
    let mut tracker = RunTracker::new("predict-svm", &effective, 0)?;
    let mut file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating `{}`", args.out.display()))?;
    for ((id, level), score) in keys.iter().zip(&scores) {
        let record = ScoreRecord {
            id,
            level: level.as_deref(),
            score: *score,
        };
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    tracker.record_output(&args.out);
    let manifest = tracker.finish(&args.out)?;
    println!("scored {} row(s) -> {}", scores.len(), args.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}
