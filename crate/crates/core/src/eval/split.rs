//! Seeded stratified splitting and the split assignment file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Generator recorded in the assignment file header; assignments are only
/// reproducible under this exact generator.
pub const SPLIT_RNG: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Calibration => "calibration",
            Split::Test => "test",
        }
    }
}

/// Per-id split assignment, kept in input order for stable files.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fraction: f64,
    entries: Vec<(String, Split)>,
    index: HashMap<String, Split>,
}

impl SplitAssignment {
    fn build(seed: u64, fraction: f64, entries: Vec<(String, Split)>) -> Self {
        let index = entries.iter().cloned().collect();
        SplitAssignment {
            seed,
            fraction,
            entries,
            index,
        }
    }

    pub fn entries(&self) -> &[(String, Split)] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<Split> {
        self.index.get(id).copied()
    }

    pub fn counts(&self) -> (usize, usize) {
        let cal = self
            .entries
            .iter()
            .filter(|(_, s)| *s == Split::Calibration)
            .count();
        (cal, self.entries.len() - cal)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "# radlabel-split seed={} fraction={} rng={SPLIT_RNG}",
            self.seed, self.fraction
        )?;
        for (id, split) in &self.entries {
            writeln!(w, "{id}\t{}", split.as_str())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let file = SplitFile::read(path)?;
        let mut entries = Vec::with_capacity(file.entries.len());
        for (line, (id, name)) in file.entries.into_iter().enumerate() {
            let split = match name.as_str() {
                "calibration" => Split::Calibration,
                "test" => Split::Test,
                other => {
                    return Err(EvalError::MalformedSplitLine {
                        line: line + 2,
                        message: format!("unknown split name `{other}`"),
                    })
                }
            };
            entries.push((id, split));
        }
        Ok(Self::build(file.seed, file.fraction, entries))
    }
}

/// Raw split file with free-form split names; the classifier pipeline uses
/// this with train/validation/test assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFile {
    pub seed: u64,
    pub fraction: f64,
    pub entries: Vec<(String, String)>,
}

impl SplitFile {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "# radlabel-split seed={} fraction={} rng={SPLIT_RNG}",
            self.seed, self.fraction
        )?;
        for (id, name) in &self.entries {
            writeln!(w, "{id}\t{name}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or(EvalError::MalformedSplitLine {
                line: 1,
                message: "empty file".to_string(),
            })??;
        let (seed, fraction) = parse_header(&header)?;
        let mut entries = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (id, name) = line.split_once('\t').ok_or(EvalError::MalformedSplitLine {
                line: idx + 2,
                message: "expected `id<TAB>split`".to_string(),
            })?;
            entries.push((id.to_string(), name.to_string()));
        }
        Ok(SplitFile {
            seed,
            fraction,
            entries,
        })
    }
}

fn parse_header(header: &str) -> Result<(u64, f64), EvalError> {
    let err = |message: &str| EvalError::MalformedSplitLine {
        line: 1,
        message: message.to_string(),
    };
    if !header.starts_with("# radlabel-split ") {
        return Err(err("missing `# radlabel-split` header"));
    }
    let mut seed = None;
    let mut fraction = None;
    for token in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = token.strip_prefix("seed=") {
            seed = v.parse().ok();
        } else if let Some(v) = token.strip_prefix("fraction=") {
            fraction = v.parse().ok();
        }
    }
    match (seed, fraction) {
        (Some(s), Some(f)) => Ok((s, f)),
        _ => Err(err("header must carry seed= and fraction=")),
    }
}

/// Assigns round(fraction * n) items of each label class to the calibration
/// split via a seeded shuffle, clamped so that whenever a class has at
/// least two items, both splits keep at least one of them. Identical
/// inputs and seed give identical assignments.
pub fn stratified_split(
    ids: &[String],
    labels: &[bool],
    fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, EvalError> {
    if ids.len() != labels.len() {
        return Err(EvalError::SplitLengthMismatch {
            ids: ids.len(),
            labels: labels.len(),
        });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    {
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(EvalError::DuplicateId(id.clone()));
            }
        }
    }

    let mut assignment: Vec<Option<Split>> = vec![None; ids.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fixed class order keeps the stream layout stable.
    for class in [false, true] {
        let mut members: Vec<usize> = (0..ids.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len();
        let mut k = (fraction * n as f64).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = k.min(n);
        }
        for (rank, &idx) in members.iter().enumerate() {
            assignment[idx] = Some(if rank < k {
                Split::Calibration
            } else {
                Split::Test
            });
        }
    }

    let entries = ids
        .iter()
        .zip(assignment)
        .map(|(id, split)| (id.clone(), split.expect("every item assigned")))
        .collect();
    Ok(SplitAssignment::build(seed, fraction, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i}")).collect()
    }

    #[test]
    fn per_class_counts_follow_rounding() {
        let labels: Vec<bool> = [true, true, true, true, false, false, false, false, false, false]
            .to_vec();
        let split = stratified_split(&ids(10), &labels, 0.5, 42).unwrap();
        let cal_pos = split
            .entries()
            .iter()
            .zip(&labels)
            .filter(|((_, s), &l)| *s == Split::Calibration && l)
            .count();
        let cal_neg = split
            .entries()
            .iter()
            .zip(&labels)
            .filter(|((_, s), &l)| *s == Split::Calibration && !l)
            .count();
        assert_eq!(cal_pos, 2);
        assert_eq!(cal_neg, 3);
    }

    #[test]
    fn same_seed_same_assignment() {
        let labels = vec![true, false, true, false, true, false, false];
        let a = stratified_split(&ids(7), &labels, 0.4, 7).unwrap();
        let b = stratified_split(&ids(7), &labels, 0.4, 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&ids(7), &labels, 0.4, 8).unwrap();
        assert_ne!(a.entries(), c.entries());
    }

    #[test]
    fn extreme_fraction_is_clamped_to_keep_both_splits_populated() {
        let labels = vec![true, true, false, false];
        let split = stratified_split(&ids(4), &labels, 0.999, 1).unwrap();
        let (cal, test) = split.counts();
        assert_eq!(cal, 2);
        assert_eq!(test, 2);
        for class in [true, false] {
            let in_test = split
                .entries()
                .iter()
                .zip(&labels)
                .filter(|((_, s), &l)| *s == Split::Test && l == class)
                .count();
            assert_eq!(in_test, 1);
        }
    }

    #[test]
    fn empty_class_contributes_nothing() {
        let labels = vec![false, false, false];
        let split = stratified_split(&ids(3), &labels, 0.5, 0).unwrap();
        assert_eq!(split.entries().len(), 3);
    }

    #[test]
    fn invalid_fraction_rejected() {
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                stratified_split(&ids(4), &[true, false, true, false], f, 0),
                Err(EvalError::InvalidFraction(_))
            ));
        }
    }

    #[test]
    fn assignment_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.tsv");
        let labels = vec![true, false, true, false, false];
        let split = stratified_split(&ids(5), &labels, 0.5, 9).unwrap();
        split.write(&path).unwrap();
        let loaded = SplitAssignment::read(&path).unwrap();
        assert_eq!(split, loaded);
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.fraction, 0.5);
    }

    #[test]
    fn generic_split_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits3.tsv");
        let file = SplitFile {
            seed: 3,
            fraction: 0.8,
            entries: vec![
                ("a".into(), "train".into()),
                ("b".into(), "validation".into()),
                ("c".into(), "test".into()),
            ],
        };
        file.write(&path).unwrap();
        assert_eq!(SplitFile::read(&path).unwrap(), file);
    }

    proptest! {
        #[test]
        fn split_is_deterministic_and_positive_rates_stay_close(
            labels in proptest::collection::vec(proptest::bool::ANY, 4..80),
            seed in 0u64..500,
            fraction in 0.1f64..0.9
        ) {
            prop_assume!(labels.iter().filter(|&&l| l).count() >= 2);
            prop_assume!(labels.iter().filter(|&&l| !l).count() >= 2);
            let id_list = ids(labels.len());
            let a = stratified_split(&id_list, &labels, fraction, seed).unwrap();
            let b = stratified_split(&id_list, &labels, fraction, seed).unwrap();
            prop_assert_eq!(&a, &b);

            let count = |split: Split, class: bool| {
                a.entries()
                    .iter()
                    .zip(&labels)
                    .filter(|((_, s), &l)| *s == split && l == class)
                    .count() as f64
            };
            let (cal_pos, cal_neg) = (count(Split::Calibration, true), count(Split::Calibration, false));
            let (test_pos, test_neg) = (count(Split::Test, true), count(Split::Test, false));
            let n_cal = cal_pos + cal_neg;
            let n_test = test_pos + test_neg;
            prop_assert!(n_cal >= 2.0 && n_test >= 2.0);
            // At most one item's worth of positive-rate difference.
            let diff = (cal_pos / n_cal - test_pos / n_test).abs();
            let slack = 1.0 / n_cal + 1.0 / n_test;
            prop_assert!(diff <= slack + 1e-12);
        }
    }
}
