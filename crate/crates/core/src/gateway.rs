//! Client for a logprob-exposing chat-completions server: summary
//! generation, yes/no token scoring, and batch corpus labelling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::ser::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::condition::ConditionSpec;
use crate::corpus::{prepare_report_text, Report};
use crate::prompt::{PromptBundle, PromptError, Strategy, TemplateSet};
use crate::wire::{
    ChatMessage, ChatRequest, ChatResponse, TopLogprob, CHAT_COMPLETIONS_PATH,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid client config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed server response: {0}")]
    Protocol(String),
    #[error("no yes/no variant among the top-{requested} tokens: {top_k:?}")]
    Unscorable {
        requested: u32,
        top_k: Vec<TopLogprob>,
    },
    #[error("server generated an empty summary")]
    EmptySummary,
    #[error("expected a {expected} bundle, got {got}")]
    WrongStrategy {
        expected: &'static str,
        got: Strategy,
    },
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed label record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Server base URL; the chat-completions path is appended.
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_generated_tokens: u32,
    pub top_logprobs: u32,
    pub max_in_flight: usize,
    /// Total attempts per request, transport retries included.
    pub retry_limit: u32,
    pub timeout_secs: u64,
    /// Base delay for exponential backoff between retries.
    pub retry_backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            endpoint: "http://127.0.0.1:8080".into(),
            model_name: "default".into(),
            temperature: 0.0,
            max_generated_tokens: 256,
            top_logprobs: 5,
            max_in_flight: 8,
            retry_limit: 3,
            timeout_secs: 30,
            retry_backoff_ms: 100,
            seed: None,
        }
    }
}

impl ClientConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.endpoint.trim().is_empty() {
            out.push("endpoint is empty".to_string());
        }
        if self.model_name.trim().is_empty() {
            out.push("model_name is empty".to_string());
        }
        if self.top_logprobs < 2 {
            out.push(format!(
                "top_logprobs must be at least 2 (both answer tokens), got {}",
                self.top_logprobs
            ));
        }
        if self.max_in_flight < 1 {
            out.push("max_in_flight must be at least 1".to_string());
        }
        if self.retry_limit < 1 {
            out.push("retry_limit must be at least 1".to_string());
        }
        if self.max_generated_tokens < 1 {
            out.push("max_generated_tokens must be at least 1".to_string());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            out.push(format!("temperature must be >= 0, got {}", self.temperature));
        }
        out
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(GatewayError::InvalidConfig(violations))
        }
    }
}

/// Softmax over the two answer logits; numerically stable for any
/// magnitudes and invariant to shifting both logits by a constant.
pub fn softmax_yes(logit_yes: f64, logit_no: f64) -> f64 {
    if logit_yes >= logit_no {
        1.0 / (1.0 + (logit_no - logit_yes).exp())
    } else {
        let e = (logit_yes - logit_no).exp();
        e / (1.0 + e)
    }
}

/// The two answer-token logits found in the top-k list and their softmaxed
/// probability of "yes". `source_token` is the surface form of the
/// higher-scoring class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub logit_yes: f64,
    pub logit_no: f64,
    pub p_yes: f64,
    pub source_token: String,
}

/// Canonical form used to match tokenizer variants of the answer words:
/// surrounding whitespace and ASCII punctuation stripped, lowercased.
pub fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase()
}

fn score_from_top_k(top_k: &[TopLogprob], requested: u32) -> Result<TokenScore, GatewayError> {
    let mut yes: Option<&TopLogprob> = None;
    let mut no: Option<&TopLogprob> = None;
    for entry in top_k {
        let slot = match normalize_token(&entry.token).as_str() {
            "yes" => &mut yes,
            "no" => &mut no,
            _ => continue,
        };
        // The best-scoring variant represents its class.
        if slot.is_none_or(|cur| entry.logprob > cur.logprob) {
            *slot = Some(entry);
        }
    }
    match (yes, no) {
        (Some(yes), Some(no)) => Ok(TokenScore {
            logit_yes: yes.logprob,
            logit_no: no.logprob,
            p_yes: softmax_yes(yes.logprob, no.logprob),
            source_token: if yes.logprob >= no.logprob {
                yes.token.clone()
            } else {
                no.token.clone()
            },
        }),
        _ => Err(GatewayError::Unscorable {
            requested,
            top_k: top_k.to_vec(),
        }),
    }
}

/// One labelling outcome per (report, level). Either the scored fields or
/// `error` is populated, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub report_id: String,
    pub condition: String,
    pub level: Option<String>,
    pub strategy: Strategy,
    #[serde(serialize_with = "serialize_p_yes")]
    pub p_yes: Option<f64>,
    pub threshold: f64,
    /// 1 when p_yes >= threshold, 0 otherwise; absent on error records.
    pub label: Option<u8>,
    pub summary: Option<String>,
    pub error: Option<String>,
}

/// Writes p_yes with 17 significant digits so label files are bit-exact
/// across read/write cycles.
fn serialize_p_yes<S: Serializer>(value: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    match value {
        None => serializer.serialize_none(),
        Some(v) => {
            let raw = serde_json::value::RawValue::from_string(format!("{v:.16e}"))
                .map_err(S::Error::custom)?;
            raw.serialize(serializer)
        }
    }
}

pub struct GatewayClient {
    http: reqwest::Client,
    cfg: ClientConfig,
    url: String,
    templates: TemplateSet,
}

impl GatewayClient {
    pub fn new(cfg: ClientConfig) -> Result<Self, GatewayError> {
        Self::with_templates(cfg, TemplateSet::default())
    }

    pub fn with_templates(cfg: ClientConfig, templates: TemplateSet) -> Result<Self, GatewayError> {
        cfg.validate()?;
        templates.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let url = format!(
            "{}{CHAT_COMPLETIONS_PATH}",
            cfg.endpoint.trim_end_matches('/')
        );
        Ok(GatewayClient {
            http,
            cfg,
            url,
            templates,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn request_for(&self, bundle: &PromptBundle, scoring: bool) -> ChatRequest {
        ChatRequest {
            model: self.cfg.model_name.clone(),
            messages: vec![
                ChatMessage::system(bundle.system_text.clone()),
                ChatMessage::user(bundle.user_text.clone()),
            ],
            temperature: self.cfg.temperature,
            max_tokens: Some(if scoring {
                1
            } else {
                self.cfg.max_generated_tokens
            }),
            logprobs: scoring,
            top_logprobs: scoring.then_some(self.cfg.top_logprobs),
            seed: self.cfg.seed,
        }
    }

    /// Posts with retries: exponential backoff with jitter on connection
    /// errors, timeouts and 5xx; client errors (4xx) fail immediately.
    async fn post_chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut last_message = String::new();
        for attempt in 0..self.cfg.retry_limit {
            if attempt > 0 {
                let base = self.cfg.retry_backoff_ms << (attempt - 1).min(8);
                let jitter = rand::rng().random_range(0..=base / 2 + 1);
                tokio::time::sleep(Duration::from_millis(base + jitter)).await;
            }
            let response = match self.http.post(&self.url).json(request).send().await {
                Ok(r) => r,
                Err(e) => {
                    last_message = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status.is_server_error() {
                last_message = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                let body = response.text().await.unwrap_or_default();
                return Err(GatewayError::Http {
                    status: status.as_u16(),
                    body,
                });
            }
            return response
                .json::<ChatResponse>()
                .await
                .map_err(|e| GatewayError::Protocol(e.to_string()));
        }
        Err(GatewayError::Transport {
            attempts: self.cfg.retry_limit,
            message: last_message,
        })
    }

    /// Generates a condition-focused summary; the bundle must be a
    /// summary request.
    pub async fn generate_summary(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        if bundle.strategy != Strategy::SummaryRequest {
            return Err(GatewayError::WrongStrategy {
                expected: "summary-request",
                got: bundle.strategy,
            });
        }
        let response = self.post_chat(&self.request_for(bundle, false)).await?;
        let content = response
            .choices
            .first()
            .and_then(|c| c.message.content.as_deref())
            .ok_or_else(|| GatewayError::Protocol("response carries no content".into()))?;
        let summary = content.trim();
        if summary.is_empty() {
            return Err(GatewayError::EmptySummary);
        }
        Ok(summary.to_string())
    }

    /// Requests one generated token with top-k log-probabilities and scores
    /// the yes/no decision from it.
    pub async fn score_yes_no(&self, bundle: &PromptBundle) -> Result<TokenScore, GatewayError> {
        if !matches!(
            bundle.strategy,
            Strategy::DirectQuery | Strategy::SummaryQuery
        ) {
            return Err(GatewayError::WrongStrategy {
                expected: "direct-query or summary-query",
                got: bundle.strategy,
            });
        }
        let response = self.post_chat(&self.request_for(bundle, true)).await?;
        let top_k = response
            .choices
            .first()
            .and_then(|c| c.logprobs.as_ref())
            .and_then(|lp| lp.content.first())
            .map(|t| t.top_logprobs.as_slice())
            .ok_or_else(|| {
                GatewayError::Protocol("response carries no token logprobs".into())
            })?;
        score_from_top_k(top_k, self.cfg.top_logprobs)
    }

    /// Labels every report (per configured level for ivd-level conditions).
    /// Requests run up to `max_in_flight` at a time but the output order is
    /// exactly the input order, and per-report failures become error
    /// records rather than aborting the batch.
    pub async fn label_corpus(
        &self,
        reports: &[Report],
        cond: &ConditionSpec,
        strategy: Strategy,
        threshold: f64,
    ) -> Result<Vec<LabelRecord>, GatewayError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(GatewayError::InvalidThreshold(threshold));
        }
        if strategy == Strategy::SummaryRequest {
            return Err(GatewayError::WrongStrategy {
                expected: "direct-query or summary-query",
                got: strategy,
            });
        }
        cond.validate().map_err(PromptError::from)?;

        let slots = cond.level_slots();
        let tasks = reports.iter().map(|report| {
            let prepared = prepare_report_text(report, cond);
            let slots = &slots;
            async move {
                self.label_one(report, &prepared, cond, strategy, threshold, slots)
                    .await
            }
        });
        let nested: Vec<Vec<LabelRecord>> = stream::iter(tasks)
            .buffered(self.cfg.max_in_flight)
            .collect()
            .await;
        Ok(nested.into_iter().flatten().collect())
    }

    async fn label_one(
        &self,
        report: &Report,
        prepared: &str,
        cond: &ConditionSpec,
        strategy: Strategy,
        threshold: f64,
        slots: &[Option<String>],
    ) -> Vec<LabelRecord> {
        let base = |level: &Option<String>| LabelRecord {
            report_id: report.id.clone(),
            condition: cond.name.clone(),
            level: level.clone(),
            strategy,
            p_yes: None,
            threshold,
            label: None,
            summary: None,
            error: None,
        };

        let summary = match strategy {
            Strategy::SummaryQuery => {
                let outcome = match self.templates.summary_request(cond, prepared) {
                    Ok(bundle) => self.generate_summary(&bundle).await,
                    Err(e) => Err(e.into()),
                };
                match outcome {
                    Ok(s) => Some(s),
                    Err(e) => {
                        return slots
                            .iter()
                            .map(|level| {
                                let mut rec = base(level);
                                rec.error = Some(format!("summary generation failed: {e}"));
                                rec
                            })
                            .collect();
                    }
                }
            }
            _ => None,
        };

        let mut records = Vec::with_capacity(slots.len());
        for level in slots {
            let bundle = match strategy {
                Strategy::DirectQuery => {
                    self.templates.direct_query(cond, prepared, level.as_deref())
                }
                Strategy::SummaryQuery => self.templates.summary_query(
                    cond,
                    prepared,
                    summary.as_deref().unwrap_or_default(),
                    level.as_deref(),
                ),
                Strategy::SummaryRequest => unreachable!("rejected above"),
            };
            let mut record = base(level);
            record.summary = summary.clone();
            match bundle {
                Ok(bundle) => match self.score_yes_no(&bundle).await {
                    Ok(score) => {
                        record.p_yes = Some(score.p_yes);
                        record.label = Some(u8::from(score.p_yes >= threshold));
                    }
                    Err(e) => record.error = Some(e.to_string()),
                },
                Err(e) => record.error = Some(e.to_string()),
            }
            records.push(record);
        }
        records
    }
}

pub fn write_label_records(
    path: impl AsRef<Path>,
    records: &[LabelRecord],
) -> Result<(), GatewayError> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| GatewayError::Protocol(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_label_records(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>, GatewayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        out.push(
            serde_json::from_str(&line).map_err(|e| GatewayError::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tl(token: &str, logprob: f64) -> TopLogprob {
        TopLogprob {
            token: token.into(),
            logprob,
        }
    }

    #[test]
    fn softmax_matches_closed_form() {
        // exp(-0.2) / (exp(-0.2) + exp(-1.8)), evaluated directly.
        let expected = (-0.2f64).exp() / ((-0.2f64).exp() + (-1.8f64).exp());
        let got = softmax_yes(-0.2, -1.8);
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.8320183851339245).abs() < 1e-15);
    }

    #[test]
    fn equal_logits_give_half() {
        assert_eq!(softmax_yes(-1.3, -1.3), 0.5);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        for (ly, lno) in [(-0.2, -1.8), (3.0, -4.0), (0.0, 0.0), (-700.0, -701.0)] {
            for shift in [-10.0, 0.0, 5.0, 100.0] {
                let a = softmax_yes(ly, lno);
                let b = softmax_yes(ly + shift, lno + shift);
                assert!((a - b).abs() < 1e-12, "({ly}, {lno}) shift {shift}");
            }
        }
    }

    #[test]
    fn p_yes_and_p_no_sum_to_one() {
        for (ly, lno) in [(-0.2, -1.8), (2.0, -2.0), (-30.0, 1.0), (0.5, 0.5)] {
            let p_yes = softmax_yes(ly, lno);
            let p_no = softmax_yes(lno, ly);
            assert!((p_yes + p_no - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn token_normalization_strips_punctuation_and_case() {
        for raw in [" yes", "Yes", "YES.", "'yes'", "\tYes!\n", "yes"] {
            assert_eq!(normalize_token(raw), "yes");
        }
        assert_eq!(normalize_token(" No,"), "no");
        assert_eq!(normalize_token("maybe"), "maybe");
    }

    #[test]
    fn scoring_picks_best_variant_per_class() {
        let top_k = vec![
            tl(" yes", -0.2),
            tl("Yes", -2.5),
            tl(" no", -1.8),
            tl("unclear", -3.0),
        ];
        let score = score_from_top_k(&top_k, 4).unwrap();
        assert_eq!(score.logit_yes, -0.2);
        assert_eq!(score.logit_no, -1.8);
        assert_eq!(score.source_token, " yes");
        assert!((score.p_yes - 0.8320183851339245).abs() < 1e-15);
    }

    #[test]
    fn missing_class_is_unscorable_and_carries_the_raw_list() {
        let top_k = vec![tl("maybe", -0.5), tl("unclear", -1.0)];
        match score_from_top_k(&top_k, 2).unwrap_err() {
            GatewayError::Unscorable { top_k: raw, .. } => {
                assert_eq!(raw.len(), 2);
                assert_eq!(raw[0].token, "maybe");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn config_violations_are_enumerated() {
        let cfg = ClientConfig {
            endpoint: " ".into(),
            top_logprobs: 1,
            max_in_flight: 0,
            ..ClientConfig::default()
        };
        let violations = cfg.violations();
        assert_eq!(violations.len(), 3);
    }

    #[test]
    fn label_records_round_trip_with_17_digit_p_yes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let records = vec![
            LabelRecord {
                report_id: "r1".into(),
                condition: "cancer".into(),
                level: None,
                strategy: Strategy::SummaryQuery,
                p_yes: Some(0.8320183851339245),
                threshold: 0.5,
                label: Some(1),
                summary: Some("focal lesion".into()),
                error: None,
            },
            LabelRecord {
                report_id: "r2".into(),
                condition: "cancer".into(),
                level: Some("L4-L5".into()),
                strategy: Strategy::DirectQuery,
                p_yes: None,
                threshold: 0.5,
                label: None,
                summary: None,
                error: Some("unscorable".into()),
            },
        ];
        write_label_records(&path, &records).unwrap();
        let loaded = read_label_records(&path).unwrap();
        assert_eq!(loaded, records);

        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        // 17 significant digits of the stored double (exact binary value
        // 0.83201838513392445406..., so the 17-digit form ends in 445).
        assert!(first.contains("\"p_yes\":8.3201838513392445e-1"), "line: {first}");
    }
}
