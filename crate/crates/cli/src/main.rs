//! Pipeline runner: every subcommand reads and writes plain files, so runs
//! compose through the filesystem and reproduce from their manifests.

mod commands;
mod common;
mod config;
mod manifest;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

use commands::{corpus, eval, label, server, svm, synth};

#[derive(Parser)]
#[command(
    name = "radlabel",
    version,
    about = "Extract condition labels from radiology reports via a chat-completions \
             server, calibrate thresholds at the equal error rate, and train linear \
             SVM classifiers over embedding files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label a corpus against the inference server.
    Label(label::LabelArgs),
    /// Generate condition-focused summaries only.
    Summarize(label::SummarizeArgs),
    /// Compute ROC/AUROC/EER on scored records and report the EER threshold.
    Calibrate(eval::CalibrateArgs),
    /// Apply a calibration-set threshold to a test set and report metrics.
    Evaluate(eval::EvaluateArgs),
    /// Stratified calibration/test split of a ground-truth file.
    Split(eval::SplitArgs),
    /// Write the masked fine-tuning dataset (loss restricted to summaries).
    PrepFinetune(corpus::PrepFinetuneArgs),
    /// Train a linear SVM (instance-level or NSK bag-level) from embeddings.
    TrainSvm(svm::TrainSvmArgs),
    /// Score embeddings with a saved model.
    PredictSvm(svm::PredictSvmArgs),
    /// Export a two-column ROC curve file for plotting.
    RocExport(eval::RocExportArgs),
    /// Serve the deterministic mock inference server.
    MockServer(server::MockServerArgs),
    /// Generate a synthetic corpus, embeddings, rules and ground truth.
    GenSynthetic(synth::GenSyntheticArgs),
}

fn dispatch(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Label(args) => label::run(args),
        Command::Summarize(args) => label::run_summarize(args),
        Command::Calibrate(args) => eval::run_calibrate(args),
        Command::Evaluate(args) => eval::run_evaluate(args),
        Command::Split(args) => eval::run_split(args),
        Command::PrepFinetune(args) => corpus::run(args),
        Command::TrainSvm(args) => svm::run_train(args),
        Command::PredictSvm(args) => svm::run_predict(args),
        Command::RocExport(args) => eval::run_roc_export(args),
        Command::MockServer(args) => server::run(args),
        Command::GenSynthetic(args) => synth::run(args),
    }
}

/// Exit codes by failure category: 2 configuration, 3 i/o, 4 transport or
/// protocol, 5 data, 1 anything else.
fn categorize(error: &anyhow::Error) -> u8 {
    use radlabel::corpus::CorpusError;
    use radlabel::eval::EvalError;
    use radlabel::gateway::GatewayError;
    use radlabel::mock::MockServerError;
    use radlabel::prompt::PromptError;
    use radlabel::svm::SvmError;
    use radlabel::synthetic::SyntheticError;

    for cause in error.chain() {
        if cause.downcast_ref::<config::ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<GatewayError>() {
            return match e {
                GatewayError::InvalidConfig(_) | GatewayError::InvalidThreshold(_) => 2,
                GatewayError::Io(_) => 3,
                GatewayError::Transport { .. }
                | GatewayError::Http { .. }
                | GatewayError::Protocol(_) => 4,
                _ => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return match e {
                CorpusError::Io(_) => 3,
                CorpusError::InvalidSectionConfig(_) => 2,
                _ => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Io(_) => 3,
                EvalError::InvalidFraction(_) => 2,
                _ => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<SvmError>() {
            return match e {
                SvmError::Io(_) => 3,
                SvmError::InvalidParameter(_) => 2,
                _ => 5,
            };
        }
        if let Some(e) = cause.downcast_ref::<SyntheticError>() {
            return match e {
                SyntheticError::Io(_) => 3,
                SyntheticError::Invalid(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<MockServerError>() {
            return match e {
                MockServerError::Io(_) => 3,
                MockServerError::InvalidTable(_) => 2,
            };
        }
        if cause.downcast_ref::<PromptError>().is_some() {
            return 5;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(categorize(&error))
        }
    }
}
