//! Synthetic test fixtures: keyword-planted reports with a matching mock
//! rule table, plus class-shifted gaussian embedding bags, all sharing one
//! ground-truth file so the whole pipeline can run offline end to end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{ConditionSpec, Granularity};
use crate::corpus::{segment_sections, Report};
use crate::mock::{LogitPair, Rule, RuleTable};
use crate::num::derive_seed;
use crate::svm::EmbeddingInstance;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub report_count: usize,
    pub positive_rate: f64,
    pub seed: u64,
    pub condition_name: String,
    /// Keywords planted in positive reports; each gets a mock rule.
    pub keywords: Vec<String>,
    pub embedding_dim: usize,
    /// Per-coordinate mean offset of shifted instances, in units of the
    /// unit noise scale.
    pub shift: f64,
    pub bag_size_min: usize,
    pub bag_size_max: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            report_count: 200,
            positive_rate: 0.4,
            seed: 7,
            condition_name: "cancer".into(),
            keywords: vec!["metastasis".into()],
            embedding_dim: 64,
            shift: 2.0,
            bag_size_min: 5,
            bag_size_max: 18,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let mut problems = Vec::new();
        if self.report_count == 0 {
            problems.push("report_count must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            problems.push(format!(
                "positive_rate must lie in [0, 1], got {}",
                self.positive_rate
            ));
        }
        if self.condition_name.trim().is_empty() {
            problems.push("condition_name is empty".to_string());
        }
        if self.keywords.is_empty() || self.keywords.iter().any(|k| k.trim().is_empty()) {
            problems.push("keywords must be non-empty".to_string());
        }
        if self.embedding_dim == 0 {
            problems.push("embedding_dim must be at least 1".to_string());
        }
        if self.bag_size_min == 0 || self.bag_size_min > self.bag_size_max {
            problems.push(format!(
                "bag sizes must satisfy 1 <= min <= max, got {}..{}",
                self.bag_size_min, self.bag_size_max
            ));
        }
        if !self.shift.is_finite() {
            problems.push("shift must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SyntheticError::Invalid(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub reports: Vec<Report>,
    /// Ground truth per report id; embedding bags reuse the report id.
    pub truth: Vec<(String, bool)>,
    pub rules: RuleTable,
    pub condition: ConditionSpec,
    pub instances: Vec<EmbeddingInstance>,
}

const NEUTRAL_FINDINGS: [&str; 6] = [
    "Normal vertebral alignment.",
    "Disc heights are preserved.",
    "No significant canal narrowing.",
    "Mild degenerative change only.",
    "Unremarkable marrow signal.",
    "Facet joints appear intact.",
];

const HISTORY_LINES: [&str; 4] = [
    "Chronic low back pain.",
    "Follow-up of a known condition.",
    "Lower limb weakness under investigation.",
    "Routine surveillance imaging.",
];

const SITES: [&str; 5] = [
    "the thoracic spine",
    "the lumbar spine",
    "the cervical spine",
    "the T10 vertebral body",
    "the L4 vertebral body",
];

const LEVELS: [&str; 5] = ["L1-L2", "L2-L3", "L3-L4", "L4-L5", "L5-S1"];

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus, SyntheticError> {
    spec.validate()?;

    let n = spec.report_count;
    let n_pos = ((spec.positive_rate * n as f64).round() as usize).min(n);
    let mut positive = vec![false; n];
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "assign"));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(n_pos) {
            positive[i] = true;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "reports"));
    let mut reports = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (i, &pos) in positive.iter().enumerate() {
        let id = format!("r{i:04}");
        let keyword = &spec.keywords[rng.random_range(0..spec.keywords.len())];

        let mut history = HISTORY_LINES[rng.random_range(0..HISTORY_LINES.len())].to_string();
        // Query markers leak the keyword into the history of positives and
        // some controls; clinical-history exclusion is what keeps them out
        // of the prompt.
        let leak = if pos { 0.5 } else { 0.3 };
        if rng.random_range(0.0..1.0) < leak {
            history.push_str(&format!(" ?{keyword}"));
        }

        let mut findings = vec![
            NEUTRAL_FINDINGS[rng.random_range(0..NEUTRAL_FINDINGS.len())].to_string(),
            NEUTRAL_FINDINGS[rng.random_range(0..NEUTRAL_FINDINGS.len())].to_string(),
        ];
        let conclusion = if pos {
            let site = SITES[rng.random_range(0..SITES.len())];
            findings.push(format!("There is {keyword} within {site}."));
            format!("Appearances are in keeping with {keyword}.")
        } else {
            "No acute abnormality.".to_string()
        };

        let raw_text = format!(
            "CLINICAL HISTORY: {history}\nFINDINGS: {}\nCONCLUSION: {conclusion}",
            findings.join(" ")
        );
        let sections = segment_sections(&raw_text);
        reports.push(Report {
            id: id.clone(),
            patient_id: format!("p{i:04}"),
            study_id: format!("s{i:04}"),
            raw_text,
            meta: BTreeMap::new(),
            sections,
        });
        truth.push((id, pos));
    }

    let mut emb_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "embeddings"));
    let mut instances = Vec::new();
    for (id, pos) in &truth {
        let size = emb_rng.random_range(spec.bag_size_min..=spec.bag_size_max);
        let shifted = if *pos {
            emb_rng.random_range(1..=(size / 2).max(1))
        } else {
            0
        };
        let mut slots: Vec<usize> = (0..size).collect();
        slots.shuffle(&mut emb_rng);
        let shifted_slots: std::collections::HashSet<usize> =
            slots.into_iter().take(shifted).collect();
        for j in 0..size {
            let offset = if shifted_slots.contains(&j) {
                spec.shift
            } else {
                0.0
            };
            instances.push(EmbeddingInstance {
                bag_id: id.clone(),
                instance_id: format!("{id}-i{j:02}"),
                level: Some(LEVELS[j % LEVELS.len()].to_string()),
                vector: (0..spec.embedding_dim)
                    .map(|_| (emb_rng.sample::<f64, _>(StandardNormal) + offset) as f32)
                    .collect(),
            });
        }
    }

    let keyword_list = spec.keywords.join(" or ");
    let condition = ConditionSpec {
        name: spec.condition_name.clone(),
        definition: format!(
            "{} is present when the report describes {keyword_list}.",
            spec.condition_name
        ),
        granularity: Granularity::ScanLevel,
        exclude_clinical_history: true,
        levels: None,
    };

    let rules = RuleTable {
        rules: spec
            .keywords
            .iter()
            .map(|keyword| Rule {
                keyword: keyword.clone(),
                logit_yes: 2.0,
                logit_no: -2.0,
                canned_summary: format!(
                    "The report describes {keyword}, in keeping with {}.",
                    spec.condition_name
                ),
            })
            .collect(),
        default_logits: LogitPair { yes: -2.0, no: 2.0 },
        default_summary: "No findings related to the target condition.".into(),
    };

    Ok(SyntheticCorpus {
        reports,
        truth,
        rules,
        condition,
        instances,
    })
}

/// Ground-truth line: scan-level entries carry no level, ivd-level truth
/// sets one per (id, level).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    pub label: u8,
}

pub fn write_truth(path: impl AsRef<Path>, truth: &[(String, bool)]) -> Result<(), SyntheticError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, label) in truth {
        let record = TruthRecord {
            id: id.clone(),
            level: None,
            label: u8::from(*label),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| SyntheticError::Invalid(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_records(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>, SyntheticError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        out.push(serde_json::from_str(&line).map_err(|e| {
            SyntheticError::Invalid(format!("truth line {}: {e}", idx + 1))
        })?);
    }
    Ok(out)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<(String, bool)>, SyntheticError> {
    Ok(read_truth_records(path)?
        .into_iter()
        .map(|r| (r.id, r.label != 0))
        .collect())
}
