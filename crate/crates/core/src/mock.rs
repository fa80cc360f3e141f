//! Deterministic stand-in for the inference server, driven by a keyword
//! rule table. Responses are pure functions of the request body, so
//! repeated runs produce byte-identical outputs.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Json, Response};
use axum::routing::post;
use axum::Router;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::prompt::ANSWER_INSTRUCTION;
use crate::wire::{
    ChatRequest, ChatResponse, Choice, ErrorBody, LogprobsBlock, ResponseMessage, TokenLogprob,
    TopLogprob, CHAT_COMPLETIONS_PATH,
};

#[derive(Debug, Error)]
pub enum MockServerError {
    #[error("invalid rule table: {0}")]
    InvalidTable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Case-insensitive substring matched against the final user message.
    pub keyword: String,
    pub logit_yes: f64,
    pub logit_no: f64,
    pub canned_summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPair {
    pub yes: f64,
    pub no: f64,
}

/// First matching rule wins; requests matching no rule fall back to the
/// default logits (scoring) or the default summary (generation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
    pub default_logits: LogitPair,
    #[serde(default = "default_summary_text")]
    pub default_summary: String,
}

fn default_summary_text() -> String {
    "No findings related to the target condition.".to_string()
}

impl Default for RuleTable {
    fn default() -> Self {
        RuleTable {
            rules: vec![Rule {
                keyword: "metastasis".into(),
                logit_yes: 2.0,
                logit_no: -2.0,
                canned_summary: "The report describes metastasis.".into(),
            }],
            default_logits: LogitPair { yes: -2.0, no: 2.0 },
            default_summary: default_summary_text(),
        }
    }
}

impl RuleTable {
    pub fn validate(&self) -> Result<(), MockServerError> {
        let mut seen = std::collections::HashSet::new();
        for rule in &self.rules {
            if rule.keyword.trim().is_empty() {
                return Err(MockServerError::InvalidTable("empty keyword".into()));
            }
            if !seen.insert(rule.keyword.to_lowercase()) {
                return Err(MockServerError::InvalidTable(format!(
                    "duplicate keyword `{}` (matching is case-insensitive)",
                    rule.keyword
                )));
            }
            for v in [rule.logit_yes, rule.logit_no] {
                if !v.is_finite() {
                    return Err(MockServerError::InvalidTable(format!(
                        "non-finite logit for keyword `{}`",
                        rule.keyword
                    )));
                }
            }
        }
        if !self.default_logits.yes.is_finite() || !self.default_logits.no.is_finite() {
            return Err(MockServerError::InvalidTable(
                "non-finite default logits".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MockServerError> {
        let data = std::fs::read_to_string(path)?;
        let table: RuleTable = serde_json::from_str(&data)
            .map_err(|e| MockServerError::InvalidTable(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MockServerError> {
        let data = serde_json::to_string_pretty(self)
            .map_err(|e| MockServerError::InvalidTable(e.to_string()))?;
        std::fs::write(path, data + "\n")?;
        Ok(())
    }

    fn matching_rule(&self, message: &str) -> Option<&Rule> {
        let haystack = message.to_lowercase();
        self.rules
            .iter()
            .find(|rule| haystack.contains(&rule.keyword.to_lowercase()))
    }
}

fn bad_request(message: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(ErrorBody::invalid_request(message)),
    )
        .into_response()
}

/// Fixed response identifiers keep responses byte-identical across runs.
fn respond(model: &str, content: String, logprobs: Option<LogprobsBlock>) -> ChatResponse {
    ChatResponse {
        id: "chatcmpl-mock".into(),
        object: "chat.completion".into(),
        created: 0,
        model: model.to_string(),
        choices: vec![Choice {
            index: 0,
            message: ResponseMessage {
                role: "assistant".into(),
                content: Some(content),
            },
            logprobs,
            finish_reason: Some("stop".into()),
        }],
    }
}

async fn handle_chat(State(table): State<Arc<RuleTable>>, body: Bytes) -> Response {
    let request: ChatRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("malformed request body: {e}")),
    };
    let Some(user_message) = request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .map(|m| m.content.as_str())
    else {
        return bad_request("request carries no user message");
    };

    // The answer instruction marks scoring requests; anything else is a
    // summary-style generation.
    if user_message.contains(ANSWER_INSTRUCTION) {
        let (yes, no) = match table.matching_rule(user_message) {
            Some(rule) => (rule.logit_yes, rule.logit_no),
            None => (table.default_logits.yes, table.default_logits.no),
        };
        let answer = if yes >= no { "yes" } else { "no" };
        let mut top = vec![
            TopLogprob {
                token: "yes".into(),
                logprob: yes,
            },
            TopLogprob {
                token: "no".into(),
                logprob: no,
            },
        ];
        top.sort_by(|a, b| b.logprob.partial_cmp(&a.logprob).expect("finite logits"));
        let logprobs = LogprobsBlock {
            content: vec![TokenLogprob {
                token: answer.into(),
                logprob: yes.max(no),
                top_logprobs: top,
            }],
        };
        Json(respond(&request.model, answer.into(), Some(logprobs))).into_response()
    } else {
        let summary = table
            .matching_rule(user_message)
            .map(|rule| rule.canned_summary.clone())
            .unwrap_or_else(|| table.default_summary.clone());
        Json(respond(&request.model, summary, None)).into_response()
    }
}

pub struct MockServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl MockServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base endpoint URL for a ClientConfig.
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Binds and serves the wire protocol on `addr` (port 0 picks a free
/// port); returns once the listener is ready.
pub async fn serve(table: RuleTable, addr: SocketAddr) -> Result<MockServerHandle, MockServerError> {
    table.validate()?;
    let app = Router::new()
        .route(CHAT_COMPLETIONS_PATH, post(handle_chat))
        .with_state(Arc::new(table));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let server = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = server.await {
            eprintln!("mock server terminated: {e}");
        }
    });
    Ok(MockServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_validates() {
        RuleTable::default().validate().unwrap();
    }

    #[test]
    fn duplicate_keywords_rejected_case_insensitively() {
        let table = RuleTable {
            rules: vec![
                Rule {
                    keyword: "Metastasis".into(),
                    logit_yes: 1.0,
                    logit_no: 0.0,
                    canned_summary: String::new(),
                },
                Rule {
                    keyword: "metastasis".into(),
                    logit_yes: 1.0,
                    logit_no: 0.0,
                    canned_summary: String::new(),
                },
            ],
            ..RuleTable::default()
        };
        assert!(table.validate().is_err());
    }

    #[test]
    fn first_match_wins() {
        let table = RuleTable {
            rules: vec![
                Rule {
                    keyword: "canal".into(),
                    logit_yes: 1.0,
                    logit_no: 0.0,
                    canned_summary: "first".into(),
                },
                Rule {
                    keyword: "narrowing".into(),
                    logit_yes: 0.0,
                    logit_no: 1.0,
                    canned_summary: "second".into(),
                },
            ],
            ..RuleTable::default()
        };
        let rule = table.matching_rule("severe CANAL narrowing").unwrap();
        assert_eq!(rule.canned_summary, "first");
    }

    #[test]
    fn rule_table_file_round_trips_preserving_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.json");
        let table = RuleTable {
            rules: vec![
                Rule {
                    keyword: "b-second".into(),
                    logit_yes: 0.5,
                    logit_no: -0.5,
                    canned_summary: "two".into(),
                },
                Rule {
                    keyword: "a-first".into(),
                    logit_yes: 1.5,
                    logit_no: -1.5,
                    canned_summary: "one".into(),
                },
            ],
            default_logits: LogitPair { yes: -3.0, no: 0.0 },
            default_summary: "nothing".into(),
        };
        table.save(&path).unwrap();
        let loaded = RuleTable::load(&path).unwrap();
        assert_eq!(loaded, table);
        assert_eq!(loaded.rules[0].keyword, "b-second");
    }
}
