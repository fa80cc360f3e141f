//! `label` and `summarize`: drive the inference server over a corpus.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use futures::stream::{self, StreamExt};
use radlabel::corpus::{load_corpus_with, prepare_report_text};
use radlabel::gateway::{write_label_records, GatewayClient};
use radlabel::prompt::{Strategy, TemplateSet};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::RunTracker;

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Corpus file (overrides the config).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Which configured condition to label.
    #[arg(long)]
    pub condition: String,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Decision threshold on p_yes (default 0.5 or the config value).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value = "labels.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StrategyArg {
    DirectQuery,
    SummaryQuery,
}

impl From<StrategyArg> for Strategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::DirectQuery => Strategy::DirectQuery,
            StrategyArg::SummaryQuery => Strategy::SummaryQuery,
        }
    }
}

fn merged_config(args: &LabelArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(corpus) = &args.corpus {
        config.corpus = Some(corpus.clone());
    }
    if let Some(strategy) = args.strategy {
        config.labeling.strategy = strategy.into();
    }
    if let Some(threshold) = args.threshold {
        config.labeling.threshold = threshold;
    }
    if let Some(endpoint) = &args.endpoint {
        config.client.endpoint = endpoint.clone();
    }
    if let Some(model) = &args.model {
        config.client.model_name = model.clone();
    }
    if let Some(templates) = &args.templates {
        config.templates = Some(templates.clone());
    }
    config.validate()?;
    Ok(config)
}

fn load_templates(config: &RunConfig) -> anyhow::Result<TemplateSet> {
    match &config.templates {
        Some(path) => Ok(TemplateSet::load(path)?),
        None => Ok(TemplateSet::default()),
    }
}

pub fn run(args: &LabelArgs) -> anyhow::Result<()> {
    let config = merged_config(args)?;
    let cond = config.condition(&args.condition)?.clone();
    let corpus_path = config
        .corpus
        .clone()
        .ok_or_else(|| crate::config::ConfigError(vec!["no corpus configured".into()]))?;
    let reports = load_corpus_with(&corpus_path, &config.sections)
        .with_context(|| format!("loading corpus `{}`", corpus_path.display()))?;

    let out = config.resolve_output(&args.out)?;
    let effective = serde_json::json!({
        "config": &config,
        "condition": cond.name,
        "out": out.display().to_string(),
    });
    let mut tracker = RunTracker::new("label", &effective, config.seed)?;

    let client = GatewayClient::with_templates(config.client.clone(), load_templates(&config)?)?;
    let runtime = tokio::runtime::Runtime::new()?;
    let records = runtime.block_on(client.label_corpus(
        &reports,
        &cond,
        config.labeling.strategy,
        config.labeling.threshold,
    ))?;

    write_label_records(&out, &records)?;
    tracker.record_output(&out);
    let manifest = tracker.finish(&out)?;

    let errors = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "labelled {} record(s) ({} error record(s)) -> {}",
        records.len(),
        errors,
        out.display()
    );
    println!("manifest: {}", manifest.display());
    fail_if_nothing_succeeded(errors, records.len(), &config)?;
    Ok(())
}

/// Per-record failures are recorded, not fatal; but a run where every
/// single record failed is a broken server or endpoint, and exits as such
/// (the record file is still written for inspection).
fn fail_if_nothing_succeeded(
    errors: usize,
    total: usize,
    config: &RunConfig,
) -> anyhow::Result<()> {
    if total > 0 && errors == total {
        return Err(radlabel::gateway::GatewayError::Transport {
            attempts: config.client.retry_limit,
            message: format!("all {total} record(s) failed; inspect the error fields"),
        }
        .into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub condition: String,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, default_value = "summaries.jsonl")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SummaryRecord {
    report_id: String,
    summary: Option<String>,
    error: Option<String>,
}

pub fn run_summarize(args: &SummarizeArgs) -> anyhow::Result<()> {
    let label_args = LabelArgs {
        config: args.config.clone(),
        corpus: args.corpus.clone(),
        condition: args.condition.clone(),
        strategy: None,
        threshold: None,
        endpoint: args.endpoint.clone(),
        model: args.model.clone(),
        templates: args.templates.clone(),
        out: args.out.clone(),
    };
    let config = merged_config(&label_args)?;
    let cond = config.condition(&args.condition)?.clone();
    let corpus_path = config
        .corpus
        .clone()
        .ok_or_else(|| crate::config::ConfigError(vec!["no corpus configured".into()]))?;
    let reports = load_corpus_with(&corpus_path, &config.sections)
        .with_context(|| format!("loading corpus `{}`", corpus_path.display()))?;

    let out = config.resolve_output(&args.out)?;
    let effective = serde_json::json!({
        "config": &config,
        "condition": cond.name,
        "out": out.display().to_string(),
    });
    let mut tracker = RunTracker::new("summarize", &effective, config.seed)?;

    let templates = load_templates(&config)?;
    let client = GatewayClient::with_templates(config.client.clone(), templates.clone())?;
    let runtime = tokio::runtime::Runtime::new()?;
    let records: Vec<SummaryRecord> = runtime.block_on(async {
        let tasks = reports.iter().map(|report| {
            let prepared = prepare_report_text(report, &cond);
            let client = &client;
            let templates = &templates;
            let cond = &cond;
            async move {
                let outcome = match templates.summary_request(cond, &prepared) {
                    Ok(bundle) => client.generate_summary(&bundle).await,
                    Err(e) => Err(e.into()),
                };
                match outcome {
                    Ok(summary) => SummaryRecord {
                        report_id: report.id.clone(),
                        summary: Some(summary),
                        error: None,
                    },
                    Err(e) => SummaryRecord {
                        report_id: report.id.clone(),
                        summary: None,
                        error: Some(e.to_string()),
                    },
                }
            }
        });
        stream::iter(tasks)
            .buffered(config.client.max_in_flight)
            .collect()
            .await
    });

    let mut text = String::new();
    for record in &records {
        text.push_str(&serde_json::to_string(record)?);
        text.push('\n');
    }
    std::fs::write(&out, text)?;
    tracker.record_output(&out);
    let manifest = tracker.finish(&out)?;
    println!("summarised {} report(s) -> {}", records.len(), out.display());
    println!("manifest: {}", manifest.display());
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    fail_if_nothing_succeeded(errors, records.len(), &config)?;
    Ok(())
}
