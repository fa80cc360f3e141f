//! Run configuration file: one TOML document describing the corpus, the
//! conditions, the inference client and the pipeline defaults. Every value
//! can be overridden by a command-line flag.

use std::path::{Path, PathBuf};

use anyhow::Context;
use radlabel::condition::ConditionSpec;
use radlabel::corpus::SectionConfig;
use radlabel::gateway::ClientConfig;
use radlabel::prompt::Strategy;
use serde::{Deserialize, Serialize};

/// Config validation failure carrying every violation, not just the first.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.0.len())?;
        for problem in &self.0 {
            writeln!(f, "  - {problem}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; stage seeds are derived from it by label unless set
    /// explicitly.
    pub seed: u64,
    /// Relative output paths resolve into this directory when set.
    pub output_dir: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub sections: SectionConfig,
    pub conditions: Vec<ConditionSpec>,
    pub client: ClientConfig,
    pub labeling: LabelingSection,
    pub split: SplitSection,
    pub svm: SvmSection,
    /// Default input files for `train-svm`.
    pub classifier: ClassifierSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingSection {
    pub strategy: Strategy,
    pub threshold: f64,
}

impl Default for LabelingSection {
    fn default() -> Self {
        LabelingSection {
            strategy: Strategy::SummaryQuery,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub seed: Option<u64>,
    pub fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            seed: None,
            fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub tolerance: f64,
    pub max_passes: usize,
    pub seed: Option<u64>,
    pub class_weight: bool,
    pub max_unjoined_fraction: f64,
}

impl Default for SvmSection {
    fn default() -> Self {
        SvmSection {
            c: 1.0,
            tolerance: 1e-4,
            max_passes: 1000,
            seed: None,
            class_weight: false,
            max_unjoined_fraction: 0.10,
        }
    }
}

impl RunConfig {
    /// Loads a config file, resolving its relative paths against the file's
    /// own directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let data = std::fs::read_to_string(path)
            .with_context(|| format!("reading config `{}`", path.display()))?;
        let mut config: RunConfig = toml::from_str(&data)
            .map_err(|e| ConfigError(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for entry in [
            &mut config.corpus,
            &mut config.templates,
            &mut config.output_dir,
            &mut config.classifier.embeddings,
            &mut config.classifier.labels,
            &mut config.classifier.splits,
        ] {
            if let Some(p) = entry.as_mut() {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }
        Ok(config)
    }

    /// Relative output paths land inside `output_dir` when one is
    /// configured; the directory is created on demand.
    pub fn resolve_output(&self, out: &Path) -> anyhow::Result<PathBuf> {
        let resolved = match &self.output_dir {
            Some(dir) if out.is_relative() => dir.join(out),
            _ => out.to_path_buf(),
        };
        if let Some(parent) = resolved.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating output directory `{}`", parent.display()))?;
            }
        }
        Ok(resolved)
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    /// Every violation across all sections.
    // Negated comparisons are NaN-rejecting.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.sections.validate() {
            out.push(e.to_string());
        }
        let mut names = std::collections::BTreeSet::new();
        for cond in &self.conditions {
            for problem in cond.violations() {
                out.push(format!("condition `{}`: {problem}", cond.name));
            }
            if !names.insert(cond.name.as_str()) {
                out.push(format!("duplicate condition name `{}`", cond.name));
            }
        }
        for problem in self.client.violations() {
            out.push(format!("client: {problem}"));
        }
        if !(0.0..=1.0).contains(&self.labeling.threshold) {
            out.push(format!(
                "labeling: threshold must lie in [0, 1], got {}",
                self.labeling.threshold
            ));
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            out.push(format!(
                "split: fraction must lie strictly inside (0, 1), got {}",
                self.split.fraction
            ));
        }
        if !(self.svm.c > 0.0) {
            out.push(format!("svm: c must be positive, got {}", self.svm.c));
        }
        if self.svm.max_passes == 0 {
            out.push("svm: max_passes must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.svm.max_unjoined_fraction) {
            out.push(format!(
                "svm: max_unjoined_fraction must lie in [0, 1], got {}",
                self.svm.max_unjoined_fraction
            ));
        }
        for (name, path) in [
            ("corpus", &self.corpus),
            ("templates", &self.templates),
            ("classifier.embeddings", &self.classifier.embeddings),
            ("classifier.labels", &self.classifier.labels),
            ("classifier.splits", &self.classifier.splits),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    out.push(format!("{name} path `{}` does not exist", p.display()));
                }
            }
        }
        if let Some(dir) = &self.output_dir {
            if dir.exists() && !dir.is_dir() {
                out.push(format!(
                    "output_dir `{}` exists but is not a directory",
                    dir.display()
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(violations))
        }
    }

    pub fn condition(&self, name: &str) -> Result<&ConditionSpec, ConfigError> {
        self.conditions.iter().find(|c| c.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.conditions.iter().map(|c| c.name.as_str()).collect();
            ConfigError(vec![format!(
                "condition `{name}` is not configured (known: {})",
                if known.is_empty() {
                    "none".to_string()
                } else {
                    known.join(", ")
                }
            )])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn violations_are_all_enumerated() {
        let mut config = RunConfig::default();
        config.labeling.threshold = 1.5;
        config.split.fraction = 0.0;
        config.svm.c = -1.0;
        config.client.top_logprobs = 0;
        config.conditions.push(ConditionSpec {
            name: "".into(),
            definition: "".into(),
            granularity: radlabel::Granularity::ScanLevel,
            exclude_clinical_history: false,
            levels: None,
        });
        let violations = config.violations();
        assert!(violations.len() >= 6, "got: {violations:#?}");
    }

    #[test]
    fn config_file_round_trips_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        std::fs::write(&corpus, "").unwrap();
        let path = dir.path().join("run.toml");
        let text = r#"
seed = 7
corpus = "corpus.jsonl"

[[conditions]]
name = "cancer"
definition = "some definition"
granularity = "scan-level"
exclude_clinical_history = true

[client]
endpoint = "http://127.0.0.1:9"
model_name = "mock"
temperature = 0.0
max_generated_tokens = 128
top_logprobs = 5
max_in_flight = 4
retry_limit = 2
timeout_secs = 10
retry_backoff_ms = 1

[labeling]
strategy = "summary-query"
threshold = 0.5
"#;
        std::fs::write(&path, text).unwrap();
        let config = RunConfig::load(&path).unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.corpus.as_deref(), Some(corpus.as_path()));
        assert_eq!(config.condition("cancer").unwrap().name, "cancer");
        assert!(config.condition("missing").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "definitely_not_a_key = 1\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
