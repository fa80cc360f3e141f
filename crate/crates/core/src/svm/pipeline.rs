//! End-to-end classifier training: join extracted labels onto embedding
//! rows, train on the train split, calibrate the decision threshold at the
//! validation EER, and report validation and test metrics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::solver::{train_linear_svm, SvmParams};
use super::{bag_embed, decision_scores, Bag, SvmError, SvmModel};
use crate::condition::{ConditionSpec, Granularity};
use crate::eval::{evaluate, MetricsBundle, ScoredItem, ScoredSet};
use crate::num::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Validation,
    Test,
}

impl DataSplit {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "train" => Some(DataSplit::Train),
            "validation" | "val" => Some(DataSplit::Validation),
            "test" => Some(DataSplit::Test),
            _ => None,
        }
    }
}

/// Join key for supervision: the bag id for scan-level conditions, the
/// (bag id, level) pair for ivd-level ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelKey {
    pub id: String,
    pub level: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub labels_total: usize,
    pub labels_matched: usize,
    pub labels_unmatched: usize,
    /// Feature rows with no label; they are excluded from every split.
    pub rows_unlabelled: usize,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun<F> {
    pub model: SvmModel<F>,
    pub validation: MetricsBundle<F>,
    pub test: MetricsBundle<F>,
    pub join: JoinReport,
}

pub const DEFAULT_MAX_UNJOINED_FRACTION: f64 = 0.10;

fn to_scalar_vec<F: Float>(v: &[f32]) -> Vec<F> {
    v.iter()
        .map(|&x| F::from_f32(x).expect("f32 convertible to scalar"))
        .collect()
}

/// One feature row per bag (scan-level, NSK bag embedding) or per
/// configured-level instance (ivd-level, raw instance vector), in bag order.
fn assemble_rows<F: Float>(
    bags: &[Bag],
    cond: &ConditionSpec,
) -> Result<Vec<(LabelKey, Vec<F>)>, SvmError> {
    let mut rows = Vec::new();
    match cond.granularity {
        Granularity::ScanLevel => {
            for bag in bags {
                rows.push((
                    LabelKey {
                        id: bag.bag_id.clone(),
                        level: None,
                    },
                    bag_embed(bag)?,
                ));
            }
        }
        Granularity::IvdLevel => {
            let wanted: HashSet<&str> = cond
                .levels
                .as_ref()
                .map(|ls| ls.iter().map(String::as_str).collect())
                .unwrap_or_default();
            let mut seen: HashSet<(String, String)> = HashSet::new();
            for bag in bags {
                for inst in &bag.instances {
                    let Some(level) = inst.level.as_deref() else {
                        continue;
                    };
                    if !wanted.contains(level) {
                        continue;
                    }
                    if !seen.insert((bag.bag_id.clone(), level.to_string())) {
                        return Err(SvmError::DuplicateRow {
                            bag: bag.bag_id.clone(),
                            level: level.to_string(),
                        });
                    }
                    rows.push((
                        LabelKey {
                            id: bag.bag_id.clone(),
                            level: Some(level.to_string()),
                        },
                        to_scalar_vec(&inst.vector),
                    ));
                }
            }
        }
    }
    Ok(rows)
}

pub fn train_condition_classifier<F: Float>(
    bags: &[Bag],
    labels: &HashMap<LabelKey, bool>,
    cond: &ConditionSpec,
    splits: &HashMap<String, DataSplit>,
    params: &SvmParams<F>,
    max_unjoined_fraction: f64,
) -> Result<ClassifierRun<F>, SvmError> {
    let rows = assemble_rows::<F>(bags, cond)?;

    let row_keys: HashSet<&LabelKey> = rows.iter().map(|(k, _)| k).collect();
    let labels_total = labels.len();
    let labels_matched = labels.keys().filter(|k| row_keys.contains(k)).count();
    let labels_unmatched = labels_total - labels_matched;
    let limit_percent = max_unjoined_fraction * 100.0;
    if labels_total == 0
        || (labels_unmatched as f64) > max_unjoined_fraction * labels_total as f64
    {
        return Err(SvmError::JoinFailure {
            unmatched: labels_unmatched,
            total: labels_total,
            limit_percent,
        });
    }

    let mut rows_unlabelled = 0;
    type Partition<F> = (Vec<Vec<F>>, Vec<bool>, Vec<String>);
    let mut partitions: HashMap<DataSplit, Partition<F>> = HashMap::new();
    for (key, feature) in rows {
        let Some(&label) = labels.get(&key) else {
            rows_unlabelled += 1;
            continue;
        };
        let split = *splits
            .get(&key.id)
            .ok_or_else(|| SvmError::MissingSplit(key.id.clone()))?;
        let display = match &key.level {
            Some(level) => format!("{}#{level}", key.id),
            None => key.id.clone(),
        };
        let entry = partitions.entry(split).or_default();
        entry.0.push(feature);
        entry.1.push(label);
        entry.2.push(display);
    }

    let join = JoinReport {
        labels_total,
        labels_matched,
        labels_unmatched,
        rows_unlabelled,
    };

    let take = |split: DataSplit, name: &str| {
        partitions
            .get(&split)
            .filter(|(x, _, _)| !x.is_empty())
            .ok_or_else(|| SvmError::EmptySplit(name.to_string()))
    };
    let (train_x, train_y, _) = take(DataSplit::Train, "train")?;
    let (val_x, val_y, val_ids) = take(DataSplit::Validation, "validation")?;
    let (test_x, test_y, test_ids) = take(DataSplit::Test, "test")?;

    let model = train_linear_svm(train_x, train_y, params)?;

    let scored = |x: &[Vec<F>], y: &[bool], ids: &[String]| -> Result<ScoredSet<F>, SvmError> {
        let scores = decision_scores(&model, x)?;
        let items = ids
            .iter()
            .zip(scores)
            .zip(y)
            .map(|((id, score), &label)| ScoredItem {
                id: id.clone(),
                score,
                label,
            })
            .collect();
        Ok(ScoredSet::new(items)?)
    };
    let val_set = scored(val_x, val_y, val_ids)?;
    let test_set = scored(test_x, test_y, test_ids)?;

    // Threshold comes from the validation EER in both reports.
    let validation = evaluate(&val_set, &val_set)?;
    let test = evaluate(&test_set, &val_set)?;

    Ok(ClassifierRun {
        model,
        validation,
        test,
        join,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::EmbeddingInstance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const LEVELS: [&str; 3] = ["L3-L4", "L4-L5", "L5-S1"];

    fn ivd_cond() -> ConditionSpec {
        ConditionSpec {
            name: "stenosis".into(),
            definition: "narrowing".into(),
            granularity: Granularity::IvdLevel,
            exclude_clinical_history: false,
            levels: Some(LEVELS.iter().map(|s| s.to_string()).collect()),
        }
    }

    fn scan_cond() -> ConditionSpec {
        ConditionSpec {
            name: "cancer".into(),
            definition: "malignancy".into(),
            granularity: Granularity::ScanLevel,
            exclude_clinical_history: true,
            levels: None,
        }
    }

    /// Bags with gaussian instances; positive bags shift one or more
    /// instances by `shift` per coordinate.
    fn mil_bags(
        n: usize,
        dim: usize,
        shift: f64,
        positive: impl Fn(usize) -> bool,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Bag>, HashMap<LabelKey, bool>) {
        let mut bags = Vec::new();
        let mut labels = HashMap::new();
        for b in 0..n {
            let bag_id = format!("s{b:04}");
            let m = rng.random_range(5..=18);
            let pos = positive(b);
            let shifted = if pos { rng.random_range(1..=(m / 2).max(1)) } else { 0 };
            let instances = (0..m)
                .map(|i| {
                    let offset = if i < shifted { shift } else { 0.0 };
                    EmbeddingInstance {
                        bag_id: bag_id.clone(),
                        instance_id: format!("{bag_id}-i{i:02}"),
                        level: Some(LEVELS[i % LEVELS.len()].to_string()),
                        vector: (0..dim)
                            .map(|_| (rng.sample::<f64, _>(StandardNormal) + offset) as f32)
                            .collect(),
                    }
                })
                .collect();
            bags.push(Bag::new(bag_id.clone(), instances).unwrap());
            labels.insert(
                LabelKey {
                    id: bag_id,
                    level: None,
                },
                pos,
            );
        }
        (bags, labels)
    }

    fn three_way_splits(bags: &[Bag], train: usize, val: usize) -> HashMap<String, DataSplit> {
        bags.iter()
            .enumerate()
            .map(|(i, b)| {
                let split = if i < train {
                    DataSplit::Train
                } else if i < train + val {
                    DataSplit::Validation
                } else {
                    DataSplit::Test
                };
                (b.bag_id.clone(), split)
            })
            .collect()
    }

    #[test]
    fn mil_benchmark_reaches_high_test_auroc() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (bags, labels) = mil_bags(250, 16, 2.0, |b| b % 2 == 0, &mut rng);
        let splits = three_way_splits(&bags, 150, 50);
        let run = train_condition_classifier::<f64>(
            &bags,
            &labels,
            &scan_cond(),
            &splits,
            &SvmParams::default(),
            DEFAULT_MAX_UNJOINED_FRACTION,
        )
        .unwrap();
        assert!(run.test.auroc >= 0.95, "test auroc {}", run.test.auroc);
        assert_eq!(run.join.labels_unmatched, 0);
    }

    #[test]
    fn ivd_level_produces_one_row_per_study_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bags = Vec::new();
        let mut labels = HashMap::new();
        for b in 0..10 {
            let bag_id = format!("s{b}");
            let instances = LEVELS
                .iter()
                .map(|level| EmbeddingInstance {
                    bag_id: bag_id.clone(),
                    instance_id: format!("{bag_id}-{level}"),
                    level: Some(level.to_string()),
                    vector: (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                })
                .collect();
            bags.push(Bag::new(bag_id.clone(), instances).unwrap());
            for level in LEVELS {
                labels.insert(
                    LabelKey {
                        id: bag_id.clone(),
                        level: Some(level.to_string()),
                    },
                    (b + level.len()) % 2 == 0,
                );
            }
        }
        let rows = assemble_rows::<f64>(&bags, &ivd_cond()).unwrap();
        assert_eq!(rows.len(), 30);
        // And rows join against the 30 labels.
        let row_keys: HashSet<_> = rows.iter().map(|(k, _)| k.clone()).collect();
        assert!(labels.keys().all(|k| row_keys.contains(k)));
    }

    #[test]
    fn foreign_label_ids_abort_the_join() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (bags, _) = mil_bags(12, 4, 2.0, |b| b % 2 == 0, &mut rng);
        let labels: HashMap<LabelKey, bool> = (0..12)
            .map(|i| {
                (
                    LabelKey {
                        id: format!("foreign{i}"),
                        level: None,
                    },
                    i % 2 == 0,
                )
            })
            .collect();
        let splits = three_way_splits(&bags, 6, 3);
        let err = train_condition_classifier(
            &bags,
            &labels,
            &scan_cond(),
            &splits,
            &SvmParams::<f64>::default(),
            DEFAULT_MAX_UNJOINED_FRACTION,
        )
        .unwrap_err();
        match err {
            SvmError::JoinFailure { unmatched, total, .. } => {
                assert_eq!((unmatched, total), (12, 12));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn missing_split_assignment_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (bags, labels) = mil_bags(8, 4, 2.0, |b| b % 2 == 0, &mut rng);
        let mut splits = three_way_splits(&bags, 4, 2);
        splits.remove(&bags[0].bag_id);
        let err = train_condition_classifier(
            &bags,
            &labels,
            &scan_cond(),
            &splits,
            &SvmParams::<f64>::default(),
            DEFAULT_MAX_UNJOINED_FRACTION,
        )
        .unwrap_err();
        assert!(matches!(err, SvmError::MissingSplit(_)));
    }

    #[test]
    fn duplicate_study_level_rows_are_rejected() {
        let inst = |level: &str, id: &str| EmbeddingInstance {
            bag_id: "s0".into(),
            instance_id: id.into(),
            level: Some(level.into()),
            vector: vec![0.1, 0.2],
        };
        let bag = Bag::new(
            "s0".into(),
            vec![inst("L4-L5", "a"), inst("L4-L5", "b")],
        )
        .unwrap();
        let err = assemble_rows::<f64>(&[bag], &ivd_cond()).unwrap_err();
        assert!(matches!(err, SvmError::DuplicateRow { .. }));
    }
}
