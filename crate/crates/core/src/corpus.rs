//! Report ingestion and section segmentation.
//!
//! A corpus is a UTF-8 file with one JSON object per line (`id`,
//! `patient_id`, `study_id`, `text` required; anything else is kept as
//! opaque metadata). Reports are segmented into summary / clinical-history /
//! body spans by case-insensitive keyword headers at line starts, and those
//! spans drive both clinical-history exclusion and the masked fine-tuning
//! dataset.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::ConditionSpec;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed corpus line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate report id `{id}` on line {line} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("empty report id on line {line}")]
    EmptyId { line: usize },
    #[error("invalid section keyword configuration: {0}")]
    InvalidSectionConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectionKind {
    Summary,
    ClinicalHistory,
    Body,
}

/// A half-open byte range `[start, end)` of the report text, carrying the
/// matched header and where the section content (text after the header
/// keyword and its separator) begins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub kind: SectionKind,
    /// The header keyword as written in the report ("" for body spans).
    pub header_text: String,
    pub start: usize,
    pub end: usize,
    /// Offset of the section content; equals `start` for body spans.
    pub content_start: usize,
}

impl SectionSpan {
    pub fn text<'a>(&self, raw: &'a str) -> &'a str {
        &raw[self.start..self.end]
    }

    pub fn content<'a>(&self, raw: &'a str) -> &'a str {
        &raw[self.content_start..self.end]
    }
}

/// Header keyword sets. The summary set follows the usual report summary
/// headers; the history set is configurable because header inventories vary
/// between hospital systems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionConfig {
    pub summary_keywords: Vec<String>,
    pub history_keywords: Vec<String>,
}

impl Default for SectionConfig {
    fn default() -> Self {
        SectionConfig {
            summary_keywords: ["conclusion", "impression", "findings", "summary"]
                .map(String::from)
                .to_vec(),
            history_keywords: [
                "clinical history",
                "clinical details",
                "clinical indication",
                "history",
                "indication",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl SectionConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for kw in self.summary_keywords.iter().chain(&self.history_keywords) {
            if kw.trim().is_empty() {
                return Err(CorpusError::InvalidSectionConfig(
                    "empty keyword".to_string(),
                ));
            }
            if !kw.is_ascii() {
                return Err(CorpusError::InvalidSectionConfig(format!(
                    "keyword `{kw}` is not ASCII; header matching is ASCII case-insensitive"
                )));
            }
        }
        Ok(())
    }

    /// Keywords paired with their section kind, longest first so that
    /// e.g. "clinical history" wins over "history" at the same offset.
    fn ordered_keywords(&self) -> Vec<(&str, SectionKind)> {
        let mut all: Vec<(&str, SectionKind)> = self
            .summary_keywords
            .iter()
            .map(|k| (k.as_str(), SectionKind::Summary))
            .chain(
                self.history_keywords
                    .iter()
                    .map(|k| (k.as_str(), SectionKind::ClinicalHistory)),
            )
            .collect();
        all.sort_by_key(|(kw, _)| std::cmp::Reverse(kw.len()));
        all
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub patient_id: String,
    pub study_id: String,
    #[serde(rename = "text")]
    pub raw_text: String,
    /// Unknown corpus keys, preserved verbatim.
    #[serde(flatten)]
    pub meta: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub sections: Vec<SectionSpan>,
}

impl Report {
    pub fn first_summary(&self) -> Option<&SectionSpan> {
        self.sections
            .iter()
            .find(|s| s.kind == SectionKind::Summary)
    }
}

struct HeaderMatch {
    start: usize,
    keyword_end: usize,
    content_start: usize,
    kind: SectionKind,
}

/// Matches a configured keyword at byte offset `pos` (a line start).
/// Keywords are ASCII; matching is ASCII case-insensitive and requires a
/// non-alphanumeric boundary after the keyword. Returns the winning
/// (longest) keyword with the header grammar consumed:
/// keyword, horizontal whitespace, optional ':' or '-', horizontal whitespace.
fn match_header(text: &str, pos: usize, keywords: &[(&str, SectionKind)]) -> Option<HeaderMatch> {
    let bytes = text.as_bytes();
    for (kw, kind) in keywords {
        let end = pos + kw.len();
        if end > bytes.len() {
            continue;
        }
        if !bytes[pos..end].eq_ignore_ascii_case(kw.as_bytes()) {
            continue;
        }
        if bytes.get(end).is_some_and(|b| b.is_ascii_alphanumeric()) {
            continue;
        }
        let mut j = end;
        while bytes.get(j).is_some_and(|&b| b == b' ' || b == b'\t') {
            j += 1;
        }
        if bytes.get(j).is_some_and(|&b| b == b':' || b == b'-') {
            j += 1;
        }
        while bytes.get(j).is_some_and(|&b| b == b' ' || b == b'\t') {
            j += 1;
        }
        return Some(HeaderMatch {
            start: pos,
            keyword_end: end,
            content_start: j,
            kind: *kind,
        });
    }
    None
}

/// Segments `raw_text` with the default keyword sets. The spans partition
/// the text: each recognized header starts a span that runs to the next
/// header (or the end), and anything before the first header is one body
/// span. No headers means a single body span; empty text means no spans.
pub fn segment_sections(raw_text: &str) -> Vec<SectionSpan> {
    segment_sections_with(&SectionConfig::default(), raw_text)
}

pub fn segment_sections_with(config: &SectionConfig, raw_text: &str) -> Vec<SectionSpan> {
    let keywords = config.ordered_keywords();
    let mut headers: Vec<HeaderMatch> = Vec::new();
    let mut pos = 0;
    loop {
        if let Some(m) = match_header(raw_text, pos, &keywords) {
            headers.push(m);
        }
        match raw_text[pos..].find('\n') {
            Some(off) => pos = pos + off + 1,
            None => break,
        }
        if pos >= raw_text.len() {
            break;
        }
    }

    let mut spans = Vec::with_capacity(headers.len() + 1);
    if raw_text.is_empty() {
        return spans;
    }
    let first_start = headers.first().map_or(raw_text.len(), |h| h.start);
    if first_start > 0 {
        spans.push(SectionSpan {
            kind: SectionKind::Body,
            header_text: String::new(),
            start: 0,
            end: first_start,
            content_start: 0,
        });
    }
    for (i, h) in headers.iter().enumerate() {
        let end = headers.get(i + 1).map_or(raw_text.len(), |n| n.start);
        spans.push(SectionSpan {
            kind: h.kind,
            header_text: raw_text[h.start..h.keyword_end].to_string(),
            start: h.start,
            end,
            content_start: h.content_start.min(end),
        });
    }
    spans
}

/// Applies the condition's preprocessing to a report. With
/// `exclude_clinical_history` unset this is the identity on the raw text;
/// otherwise clinical-history spans are dropped and the remaining spans are
/// rejoined, inserting a single space only where the removal would glue two
/// non-whitespace characters together.
pub fn prepare_report_text(report: &Report, cond: &ConditionSpec) -> String {
    if !cond.exclude_clinical_history || report.sections.is_empty() {
        return report.raw_text.clone();
    }
    let mut out = String::with_capacity(report.raw_text.len());
    let mut removed_since_last = false;
    for span in &report.sections {
        if span.kind == SectionKind::ClinicalHistory {
            removed_since_last = true;
            continue;
        }
        let piece = span.text(&report.raw_text);
        if removed_since_last
            && !out.is_empty()
            && !piece.is_empty()
            && !out.ends_with(char::is_whitespace)
            && !piece.starts_with(char::is_whitespace)
        {
            out.push(' ');
        }
        out.push_str(piece);
        removed_since_last = false;
    }
    out
}

/// Loads a corpus file with the default section keyword sets.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Report>, CorpusError> {
    load_corpus_with(path, &SectionConfig::default())
}

pub fn load_corpus_with(
    path: impl AsRef<Path>,
    config: &SectionConfig,
) -> Result<Vec<Report>, CorpusError> {
    parse_corpus(BufReader::new(File::open(path)?), config)
}

pub fn parse_corpus<R: Read>(
    reader: BufReader<R>,
    config: &SectionConfig,
) -> Result<Vec<Report>, CorpusError> {
    config.validate()?;
    let mut reports = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut report: Report =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if report.id.is_empty() {
            return Err(CorpusError::EmptyId { line: line_no });
        }
        if let Some(&first_line) = seen.get(&report.id) {
            return Err(CorpusError::DuplicateId {
                id: report.id,
                line: line_no,
                first_line,
            });
        }
        seen.insert(report.id.clone(), line_no);
        report.sections = segment_sections_with(config, &report.raw_text);
        reports.push(report);
    }
    Ok(reports)
}

pub fn write_corpus(path: impl AsRef<Path>, reports: &[Report]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for report in reports {
        serde_json::to_writer(&mut w, report)
            .map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// One fine-tuning example: the full report text plus the byte range of the
/// first summary section, so a trainer can mask the loss to the summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub report_id: String,
    pub text: String,
    pub mask_begin: usize,
    pub mask_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneStats {
    pub written: usize,
    pub skipped: usize,
}

pub fn finetune_record(report: &Report) -> Option<FinetuneRecord> {
    let span = report.first_summary()?;
    Some(FinetuneRecord {
        report_id: report.id.clone(),
        text: report.raw_text.clone(),
        mask_begin: span.content_start,
        mask_end: span.end,
    })
}

/// Writes one record per report that has a summary section; reports without
/// one are skipped and counted.
pub fn prep_finetune_dataset(
    corpus: &[Report],
    out: impl AsRef<Path>,
) -> Result<FinetuneStats, CorpusError> {
    let mut w = BufWriter::new(File::create(out)?);
    let mut stats = FinetuneStats {
        written: 0,
        skipped: 0,
    };
    for report in corpus {
        match finetune_record(report) {
            Some(record) => {
                serde_json::to_writer(&mut w, &record)
                    .map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
                w.write_all(b"\n")?;
                stats.written += 1;
            }
            None => stats.skipped += 1,
        }
    }
    w.flush()?;
    Ok(stats)
}

pub fn read_finetune_dataset(path: impl AsRef<Path>) -> Result<Vec<FinetuneRecord>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        out.push(
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
