//! `gen-synthetic`: paired synthetic reports, embeddings, mock rules and
//! ground truth for offline end-to-end runs.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use radlabel::corpus::write_corpus;
use radlabel::eval::split::{stratified_split, Split, SplitFile};
use radlabel::num::derive_seed;
use radlabel::svm::io::write_embeddings;
use radlabel::synthetic::{generate, write_truth, SyntheticSpec};

use crate::config::RunConfig;
use crate::manifest::RunTracker;

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Directory receiving every generated file.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub reports: usize,
    #[arg(long, default_value_t = 0.4)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "cancer")]
    pub condition: String,
    /// Comma-separated keywords planted in positive reports.
    #[arg(long, value_delimiter = ',', default_value = "metastasis")]
    pub keywords: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Per-coordinate mean offset of shifted instances (in noise units).
    #[arg(long, default_value_t = 2.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 5)]
    pub bag_min: usize,
    #[arg(long, default_value_t = 18)]
    pub bag_max: usize,
    /// Fraction of bags assigned to the embedding train split.
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    /// Fraction of bags assigned to the embedding validation split.
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
}

pub fn run(args: &GenSyntheticArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        report_count: args.reports,
        positive_rate: args.positive_rate,
        seed: args.seed,
        condition_name: args.condition.clone(),
        keywords: args.keywords.clone(),
        embedding_dim: args.dim,
        shift: args.shift,
        bag_size_min: args.bag_min,
        bag_size_max: args.bag_max,
    };
    if !(args.train_fraction > 0.0
        && args.val_fraction > 0.0
        && args.train_fraction + args.val_fraction < 1.0)
    {
        anyhow::bail!(crate::config::ConfigError(vec![format!(
            "train/validation fractions must be positive and sum below 1, got {} and {}",
            args.train_fraction, args.val_fraction
        )]));
    }

    let corpus = generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating `{}`", args.out_dir.display()))?;

    let mut tracker = RunTracker::new("gen-synthetic", &spec, args.seed)?;

    let corpus_path = args.out_dir.join("corpus.jsonl");
    write_corpus(&corpus_path, &corpus.reports)?;
    tracker.record_output(&corpus_path);

    let truth_path = args.out_dir.join("truth.jsonl");
    write_truth(&truth_path, &corpus.truth)?;
    tracker.record_output(&truth_path);

    let rules_path = args.out_dir.join("rules.json");
    corpus.rules.save(&rules_path)?;
    tracker.record_output(&rules_path);

    let embeddings_path = args.out_dir.join("embeddings.txt");
    write_embeddings(&embeddings_path, &corpus.instances)?;
    tracker.record_output(&embeddings_path);

    // Three-way bag splits for classifier training: a stratified carve-out
    // of the train split, then validation vs test on the remainder.
    let ids: Vec<String> = corpus.truth.iter().map(|(id, _)| id.clone()).collect();
    let labels: Vec<bool> = corpus.truth.iter().map(|(_, l)| *l).collect();
    let stage1 = stratified_split(
        &ids,
        &labels,
        args.train_fraction,
        derive_seed(args.seed, "embedding-split-train"),
    )?;
    let mut rest_ids = Vec::new();
    let mut rest_labels = Vec::new();
    for ((id, split), &label) in stage1.entries().iter().zip(&labels) {
        if *split == Split::Test {
            rest_ids.push(id.clone());
            rest_labels.push(label);
        }
    }
    let val_share = args.val_fraction / (1.0 - args.train_fraction);
    let stage2 = stratified_split(
        &rest_ids,
        &rest_labels,
        val_share,
        derive_seed(args.seed, "embedding-split-val"),
    )?;
    let mut entries = Vec::with_capacity(ids.len());
    for (id, split) in stage1.entries() {
        if *split == Split::Calibration {
            entries.push((id.clone(), "train".to_string()));
        }
    }
    for (id, split) in stage2.entries() {
        let name = match split {
            Split::Calibration => "validation",
            Split::Test => "test",
        };
        entries.push((id.clone(), name.to_string()));
    }
    let splits_path = args.out_dir.join("embedding_splits.tsv");
    SplitFile {
        seed: args.seed,
        fraction: args.train_fraction,
        entries,
    }
    .write(&splits_path)?;
    tracker.record_output(&splits_path);

    // A ready-to-use run config pointing at the generated corpus.
    let mut run_config = RunConfig {
        seed: args.seed,
        corpus: Some(PathBuf::from("corpus.jsonl")),
        conditions: vec![corpus.condition.clone()],
        ..RunConfig::default()
    };
    run_config.client.model_name = "mock".into();
    let config_path = args.out_dir.join("run.toml");
    std::fs::write(&config_path, toml::to_string_pretty(&run_config)?)
        .with_context(|| format!("writing `{}`", config_path.display()))?;
    tracker.record_output(&config_path);

    let manifest = tracker.finish(&args.out_dir)?;
    println!(
        "generated {} reports ({} positive) in {}",
        corpus.reports.len(),
        corpus.truth.iter().filter(|(_, l)| *l).count(),
        args.out_dir.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}
