//! `prep-finetune`: write the masked fine-tuning dataset.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use radlabel::corpus::{load_corpus_with, prep_finetune_dataset};

use crate::config::RunConfig;
use crate::manifest::RunTracker;

#[derive(Debug, Args)]
pub struct PrepFinetuneArgs {
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "finetune.jsonl")]
    pub out: PathBuf,
}

pub fn run(args: &PrepFinetuneArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(corpus) = &args.corpus {
        config.corpus = Some(corpus.clone());
    }
    config.validate()?;
    let corpus_path = config
        .corpus
        .clone()
        .ok_or_else(|| crate::config::ConfigError(vec!["no corpus configured".into()]))?;
    let reports = load_corpus_with(&corpus_path, &config.sections)
        .with_context(|| format!("loading corpus `{}`", corpus_path.display()))?;

    let out = config.resolve_output(&args.out)?;
    let effective = serde_json::json!({
        "corpus": corpus_path.display().to_string(),
        "sections": &config.sections,
        "out": out.display().to_string(),
    });
    let mut tracker = RunTracker::new("prep-finetune", &effective, config.seed)?;
    let stats = prep_finetune_dataset(&reports, &out)?;
    tracker.record_output(&out);
    let manifest = tracker.finish(&out)?;
    println!(
        "written {} record(s), skipped {} without a summary section -> {}",
        stats.written,
        stats.skipped,
        out.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}
