//! Prompt construction for the two labelling strategies.
//!
//! Direct query asks for a yes/no decision straight from the report;
//! summary-query first requests a condition-focused summary and then asks
//! the question with the summary as additional input. Templates live in a
//! versioned set so experiment runs can pin exact wording.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{ConditionSpec, Granularity, InvalidCondition};

/// Fixed answer instruction terminating every question prompt. The one-word
/// constraint puts the decision in the first generated token, which is the
/// token the gateway scores.
pub const ANSWER_INSTRUCTION: &str = "Answer with a single word, yes or no.";

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    DirectQuery,
    SummaryRequest,
    SummaryQuery,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::DirectQuery => "direct-query",
            Strategy::SummaryRequest => "summary-request",
            Strategy::SummaryQuery => "summary-query",
        };
        f.write_str(s)
    }
}

/// A fully rendered chat exchange ready for the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy: Strategy,
    pub system_text: String,
    pub user_text: String,
    pub condition_name: String,
    pub level: Option<String>,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("report text is empty")]
    EmptyReport,
    #[error("summary text is empty")]
    EmptySummary,
    #[error("condition `{0}` is scan-level but a level was given")]
    LevelForScanLevel(String),
    #[error("condition `{0}` is ivd-level but no level was given")]
    MissingLevel(String),
    #[error(transparent)]
    Condition(#[from] InvalidCondition),
    #[error("invalid template set: {0}")]
    InvalidTemplate(String),
}

/// Placeholder-based prompt templates. Placeholders are written
/// `<definition>`, `<condition>`, `<report>`, `<summary>`, `<level>`;
/// `<at_level>` expands to `level_clause` when a level is requested and to
/// nothing otherwise. Substitution is a single pass, so placeholder-like
/// text inside a report cannot be re-expanded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub direct_system: String,
    pub direct_user: String,
    pub summary_request_system: String,
    pub summary_request_user: String,
    pub summary_query_system: String,
    pub summary_query_user: String,
    pub level_clause: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let decide_system = "You are a radiologist's assistant. <definition> Decide from the \
                             report whether the patient has <condition>.";
        TemplateSet {
            version: TEMPLATE_VERSION.to_string(),
            direct_system: decide_system.to_string(),
            direct_user: format!(
                "Report: <report> Question: Does the patient have <condition><at_level>? {ANSWER_INSTRUCTION}"
            ),
            summary_request_system: "You are a radiologist's assistant. <definition>".to_string(),
            summary_request_user:
                "Report: <report> Task: Summarise this report with respect to <condition>."
                    .to_string(),
            summary_query_system: decide_system.to_string(),
            summary_query_user: format!(
                "Report: <report> Summary: <summary> Question: Does the patient have <condition><at_level>? {ANSWER_INSTRUCTION}"
            ),
            level_clause: " at level <level>".to_string(),
        }
    }
}

fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(i) = rest.find('<') {
        out.push_str(&rest[..i]);
        let after = &rest[i..];
        if let Some(j) = after.find('>') {
            let name = &after[1..j];
            if let Some((_, value)) = vars.iter().find(|(k, _)| *k == name) {
                out.push_str(value);
                rest = &after[j + 1..];
                continue;
            }
        }
        out.push('<');
        rest = &after[1..];
    }
    out.push_str(rest);
    out
}

impl TemplateSet {
    pub fn validate(&self) -> Result<(), PromptError> {
        let check = |name: &str, template: &str, placeholder: &str| {
            if template.contains(placeholder) {
                Ok(())
            } else {
                Err(PromptError::InvalidTemplate(format!(
                    "{name} template is missing the {placeholder} placeholder"
                )))
            }
        };
        check("direct_system", &self.direct_system, "<definition>")?;
        check("direct_user", &self.direct_user, "<report>")?;
        check("summary_request_system", &self.summary_request_system, "<definition>")?;
        check("summary_request_user", &self.summary_request_user, "<report>")?;
        check("summary_query_system", &self.summary_query_system, "<definition>")?;
        check("summary_query_user", &self.summary_query_user, "<report>")?;
        check("summary_query_user", &self.summary_query_user, "<summary>")?;
        check("level_clause", &self.level_clause, "<level>")?;
        for (name, template) in [
            ("direct_user", &self.direct_user),
            ("summary_query_user", &self.summary_query_user),
        ] {
            if !template.trim_end().ends_with(ANSWER_INSTRUCTION) {
                return Err(PromptError::InvalidTemplate(format!(
                    "{name} template must end with the answer instruction `{ANSWER_INSTRUCTION}`"
                )));
            }
        }
        if self.summary_request_user.contains(ANSWER_INSTRUCTION) {
            return Err(PromptError::InvalidTemplate(
                "summary_request_user template must not contain the answer instruction"
                    .to_string(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, PromptError> {
        let data = std::fs::read_to_string(path)
            .map_err(|e| PromptError::InvalidTemplate(e.to_string()))?;
        let set: TemplateSet =
            serde_json::from_str(&data).map_err(|e| PromptError::InvalidTemplate(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), PromptError> {
        let data = serde_json::to_string_pretty(self)
            .map_err(|e| PromptError::InvalidTemplate(e.to_string()))?;
        std::fs::write(path, data).map_err(|e| PromptError::InvalidTemplate(e.to_string()))
    }

    fn check_level(
        cond: &ConditionSpec,
        level: Option<&str>,
    ) -> Result<Option<String>, PromptError> {
        match (cond.granularity, level) {
            (Granularity::ScanLevel, Some(_)) => {
                Err(PromptError::LevelForScanLevel(cond.name.clone()))
            }
            (Granularity::IvdLevel, None) => Err(PromptError::MissingLevel(cond.name.clone())),
            (_, lvl) => Ok(lvl.map(str::to_string)),
        }
    }

    fn vars<'a>(
        &'a self,
        cond: &'a ConditionSpec,
        report_text: &'a str,
        summary: &'a str,
        level: Option<&'a str>,
        at_level: &'a str,
    ) -> Vec<(&'a str, &'a str)> {
        vec![
            ("definition", cond.definition.as_str()),
            ("condition", cond.name.as_str()),
            ("report", report_text),
            ("summary", summary),
            ("level", level.unwrap_or("")),
            ("at_level", at_level),
        ]
    }

    pub fn direct_query(
        &self,
        cond: &ConditionSpec,
        report_text: &str,
        level: Option<&str>,
    ) -> Result<PromptBundle, PromptError> {
        cond.validate()?;
        let level = Self::check_level(cond, level)?;
        if report_text.trim().is_empty() {
            return Err(PromptError::EmptyReport);
        }
        let at_level = match &level {
            Some(l) => render(&self.level_clause, &[("level", l)]),
            None => String::new(),
        };
        let vars = self.vars(cond, report_text, "", level.as_deref(), &at_level);
        Ok(PromptBundle {
            strategy: Strategy::DirectQuery,
            system_text: render(&self.direct_system, &vars),
            user_text: render(&self.direct_user, &vars),
            condition_name: cond.name.clone(),
            level,
        })
    }

    pub fn summary_request(
        &self,
        cond: &ConditionSpec,
        report_text: &str,
    ) -> Result<PromptBundle, PromptError> {
        cond.validate()?;
        if report_text.trim().is_empty() {
            return Err(PromptError::EmptyReport);
        }
        let vars = self.vars(cond, report_text, "", None, "");
        Ok(PromptBundle {
            strategy: Strategy::SummaryRequest,
            system_text: render(&self.summary_request_system, &vars),
            user_text: render(&self.summary_request_user, &vars),
            condition_name: cond.name.clone(),
            // One summary is generated per report even for ivd-level
            // conditions; only the questions are level-specific.
            level: None,
        })
    }

    pub fn summary_query(
        &self,
        cond: &ConditionSpec,
        report_text: &str,
        summary: &str,
        level: Option<&str>,
    ) -> Result<PromptBundle, PromptError> {
        cond.validate()?;
        let level = Self::check_level(cond, level)?;
        if report_text.trim().is_empty() {
            return Err(PromptError::EmptyReport);
        }
        if summary.trim().is_empty() {
            return Err(PromptError::EmptySummary);
        }
        let at_level = match &level {
            Some(l) => render(&self.level_clause, &[("level", l)]),
            None => String::new(),
        };
        let vars = self.vars(cond, report_text, summary, level.as_deref(), &at_level);
        Ok(PromptBundle {
            strategy: Strategy::SummaryQuery,
            system_text: render(&self.summary_query_system, &vars),
            user_text: render(&self.summary_query_user, &vars),
            condition_name: cond.name.clone(),
            level,
        })
    }
}

pub fn build_direct_query(
    cond: &ConditionSpec,
    report_text: &str,
    level: Option<&str>,
) -> Result<PromptBundle, PromptError> {
    TemplateSet::default().direct_query(cond, report_text, level)
}

pub fn build_summary_request(
    cond: &ConditionSpec,
    report_text: &str,
) -> Result<PromptBundle, PromptError> {
    TemplateSet::default().summary_request(cond, report_text)
}

pub fn build_summary_query(
    cond: &ConditionSpec,
    report_text: &str,
    summary: &str,
    level: Option<&str>,
) -> Result<PromptBundle, PromptError> {
    TemplateSet::default().summary_query(cond, report_text, summary, level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stenosis() -> ConditionSpec {
        ConditionSpec {
            name: "stenosis".into(),
            definition: "Stenosis is any narrowing of the spinal canal or nerve compromise."
                .into(),
            granularity: Granularity::IvdLevel,
            exclude_clinical_history: false,
            levels: Some(vec!["L3-L4".into(), "L4-L5".into(), "L5-S1".into()]),
        }
    }

    fn cancer() -> ConditionSpec {
        ConditionSpec {
            name: "cancer".into(),
            definition: "Cancer here means any malignant process in the imaged spine.".into(),
            granularity: Granularity::ScanLevel,
            exclude_clinical_history: true,
            levels: None,
        }
    }

    const REPORT: &str = "CONCLUSION: severe canal narrowing at L4/5";

    #[test]
    fn direct_query_embeds_definition_and_report() {
        let b = build_direct_query(&cancer(), REPORT, None).unwrap();
        assert!(b.system_text.contains(&cancer().definition));
        assert!(b.user_text.contains(REPORT));
        assert!(b.user_text.ends_with(ANSWER_INSTRUCTION));
        assert_eq!(b.level, None);
    }

    #[test]
    fn direct_query_question_names_the_level() {
        let b = build_direct_query(&stenosis(), REPORT, Some("L4-L5")).unwrap();
        assert!(b.user_text.contains("at level L4-L5"));
        assert_eq!(b.level.as_deref(), Some("L4-L5"));
    }

    #[test]
    fn direct_query_rejects_empty_report() {
        assert!(matches!(
            build_direct_query(&cancer(), "", None),
            Err(PromptError::EmptyReport)
        ));
    }

    #[test]
    fn level_must_match_granularity() {
        assert!(matches!(
            build_direct_query(&cancer(), REPORT, Some("L4-L5")),
            Err(PromptError::LevelForScanLevel(_))
        ));
        assert!(matches!(
            build_direct_query(&stenosis(), REPORT, None),
            Err(PromptError::MissingLevel(_))
        ));
    }

    #[test]
    fn summary_request_has_no_question() {
        let b = build_summary_request(&cancer(), REPORT).unwrap();
        assert!(b.system_text.contains(&cancer().definition));
        assert!(b.user_text.contains(REPORT));
        assert!(!b.user_text.contains(ANSWER_INSTRUCTION));
        assert!(b.user_text.contains("Summarise this report"));
    }

    #[test]
    fn summary_request_is_deterministic() {
        let a = build_summary_request(&cancer(), REPORT).unwrap();
        let b = build_summary_request(&cancer(), REPORT).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_definition_is_a_construction_error() {
        let mut cond = cancer();
        cond.definition = String::new();
        assert!(matches!(
            build_summary_request(&cond, REPORT),
            Err(PromptError::Condition(_))
        ));
    }

    #[test]
    fn summary_query_embeds_report_and_summary() {
        let summary = "Summary: moderate central canal stenosis at L4-L5.";
        let b = build_summary_query(&stenosis(), REPORT, summary, Some("L4-L5")).unwrap();
        assert!(b.user_text.contains(REPORT));
        assert!(b.user_text.contains(summary));
        assert!(b.user_text.ends_with(ANSWER_INSTRUCTION));
    }

    #[test]
    fn summary_query_rejects_empty_summary() {
        assert!(matches!(
            build_summary_query(&stenosis(), REPORT, " ", Some("L4-L5")),
            Err(PromptError::EmptySummary)
        ));
    }

    #[test]
    fn summary_query_question_names_requested_level() {
        let b = build_summary_query(&stenosis(), REPORT, "canal narrowing", Some("L5-S1")).unwrap();
        assert!(b.user_text.contains("L5-S1"));
    }

    #[test]
    fn definition_appears_exactly_once_per_bundle() {
        for bundle in [
            build_direct_query(&cancer(), REPORT, None).unwrap(),
            build_summary_request(&cancer(), REPORT).unwrap(),
            build_summary_query(&cancer(), REPORT, "a summary", None).unwrap(),
        ] {
            let combined = format!("{} {}", bundle.system_text, bundle.user_text);
            assert_eq!(combined.matches(&cancer().definition).count(), 1);
        }
    }

    #[test]
    fn question_bundles_contain_exactly_one_answer_instruction() {
        for bundle in [
            build_direct_query(&cancer(), REPORT, None).unwrap(),
            build_summary_query(&stenosis(), REPORT, "s", Some("L3-L4")).unwrap(),
        ] {
            assert_eq!(bundle.user_text.matches(ANSWER_INSTRUCTION).count(), 1);
            assert!(bundle.user_text.ends_with(ANSWER_INSTRUCTION));
        }
    }

    #[test]
    fn report_text_cannot_inject_placeholders() {
        let sneaky = "CONCLUSION: <definition> <condition>";
        let b = build_direct_query(&cancer(), sneaky, None).unwrap();
        // The report text is inserted literally, never re-expanded.
        assert!(b.user_text.contains(sneaky));
        assert_eq!(b.user_text.matches(&cancer().definition).count(), 0);
    }

    #[test]
    fn default_templates_validate_and_round_trip() {
        let set = TemplateSet::default();
        set.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("templates.json");
        set.save(&path).unwrap();
        let loaded = TemplateSet::load(&path).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn template_validation_catches_missing_placeholder() {
        let set = TemplateSet {
            direct_user: format!("Question only. {ANSWER_INSTRUCTION}"),
            ..TemplateSet::default()
        };
        assert!(matches!(set.validate(), Err(PromptError::InvalidTemplate(_))));
    }
}
