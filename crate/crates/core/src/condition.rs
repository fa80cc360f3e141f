//! Condition specifications: the name, prompt definition and label
//! granularity for each condition the pipeline extracts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether labels are produced once per scan or once per IVD level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    ScanLevel,
    IvdLevel,
}

/// A condition to label, as configured by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: String,
    /// Prose definition inserted verbatim into prompts.
    pub definition: String,
    pub granularity: Granularity,
    #[serde(default)]
    pub exclude_clinical_history: bool,
    /// Ordered IVD level tags (e.g. "L4-L5"); required iff granularity is IvdLevel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Error)]
#[error("invalid condition `{name}`: {}", problems.join("; "))]
pub struct InvalidCondition {
    pub name: String,
    pub problems: Vec<String>,
}

impl ConditionSpec {
    /// All invariant violations, empty when the spec is well-formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("name is empty".to_string());
        }
        if self.definition.trim().is_empty() {
            out.push("definition is empty".to_string());
        }
        match (self.granularity, &self.levels) {
            (Granularity::IvdLevel, None) => {
                out.push("ivd-level condition declares no levels".to_string())
            }
            (Granularity::IvdLevel, Some(levels)) => {
                if levels.is_empty() {
                    out.push("ivd-level condition declares an empty level list".to_string());
                }
                for level in levels {
                    if level.trim().is_empty() {
                        out.push("empty level tag".to_string());
                    } else if level.contains(char::is_whitespace) || level.contains(',') {
                        out.push(format!("level tag `{level}` contains whitespace or commas"));
                    }
                }
                let mut seen = std::collections::BTreeSet::new();
                for level in levels {
                    if !seen.insert(level) {
                        out.push(format!("duplicate level tag `{level}`"));
                    }
                }
            }
            (Granularity::ScanLevel, Some(_)) => {
                out.push("scan-level condition must not declare levels".to_string())
            }
            (Granularity::ScanLevel, None) => {}
        }
        out
    }

    pub fn validate(&self) -> Result<(), InvalidCondition> {
        let problems = self.violations();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(InvalidCondition {
                name: self.name.clone(),
                problems,
            })
        }
    }

    /// One slot per label this condition produces for a single report:
    /// `[None]` for scan-level, one `Some(level)` per configured level otherwise.
    pub fn level_slots(&self) -> Vec<Option<String>> {
        match (self.granularity, &self.levels) {
            (Granularity::IvdLevel, Some(levels)) => {
                levels.iter().cloned().map(Some).collect()
            }
            _ => vec![None],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_cond() -> ConditionSpec {
        ConditionSpec {
            name: "cancer".into(),
            definition: "Cancer is present when the report describes metastasis.".into(),
            granularity: Granularity::ScanLevel,
            exclude_clinical_history: true,
            levels: None,
        }
    }

    #[test]
    fn well_formed_conditions_validate() {
        assert!(scan_cond().validate().is_ok());
        let ivd = ConditionSpec {
            name: "stenosis".into(),
            definition: "Stenosis is narrowing of the canal.".into(),
            granularity: Granularity::IvdLevel,
            exclude_clinical_history: false,
            levels: Some(vec!["L3-L4".into(), "L4-L5".into(), "L5-S1".into()]),
        };
        assert!(ivd.validate().is_ok());
        assert_eq!(ivd.level_slots().len(), 3);
        assert_eq!(scan_cond().level_slots(), vec![None]);
    }

    #[test]
    fn levels_must_match_granularity() {
        let mut c = scan_cond();
        c.levels = Some(vec!["L4-L5".into()]);
        assert!(!c.violations().is_empty());

        let mut c = scan_cond();
        c.granularity = Granularity::IvdLevel;
        c.levels = None;
        assert!(!c.violations().is_empty());
    }

    #[test]
    fn empty_definition_rejected() {
        let mut c = scan_cond();
        c.definition = "  ".into();
        let problems = c.violations();
        assert_eq!(problems.len(), 1);
        assert!(problems[0].contains("definition"));
    }
}
