//! Score evaluation: ROC curves, AUROC, equal error rate, threshold
//! calibration and the derived classification metrics.

pub mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least one positive and one negative (got {n_pos} / {n_neg})")]
    DegenerateInput { n_pos: usize, n_neg: usize },
    #[error("duplicate id `{0}` in scored set")]
    DuplicateId(String),
    #[error("non-finite score for id `{0}`")]
    NonFiniteScore(String),
    #[error("prediction/label length mismatch ({preds} vs {labels})")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("split fraction must lie strictly inside (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("ids/labels length mismatch ({ids} vs {labels})")]
    SplitLengthMismatch { ids: usize, labels: usize },
    #[error("malformed split file line {line}: {message}")]
    MalformedSplitLine { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem<F> {
    pub id: String,
    pub score: F,
    pub label: bool,
}

/// A set of scored, ground-truth-labelled items. Ids must be unique and
/// scores finite; scores are typically probabilities but any monotone
/// confidence (e.g. an SVM margin) is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet<F> {
    items: Vec<ScoredItem<F>>,
}

impl<F: Float> ScoredSet<F> {
    pub fn new(items: Vec<ScoredItem<F>>) -> Result<Self, EvalError> {
        let mut seen = std::collections::HashSet::with_capacity(items.len());
        for item in &items {
            if !item.score.is_finite() {
                return Err(EvalError::NonFiniteScore(item.id.clone()));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(EvalError::DuplicateId(item.id.clone()));
            }
        }
        Ok(ScoredSet { items })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (F, bool)>) -> Result<Self, EvalError> {
        let items = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (score, label))| ScoredItem {
                id: i.to_string(),
                score,
                label,
            })
            .collect();
        Self::new(items)
    }

    pub fn items(&self) -> &[ScoredItem<F>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let n_pos = self.items.iter().filter(|i| i.label).count();
        (n_pos, self.items.len() - n_pos)
    }

    pub fn scores(&self) -> Vec<F> {
        self.items.iter().map(|i| i.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.items.iter().map(|i| i.label).collect()
    }

    fn require_two_classes(&self) -> Result<(usize, usize), EvalError> {
        let (n_pos, n_neg) = self.counts();
        if n_pos == 0 || n_neg == 0 {
            return Err(EvalError::DegenerateInput { n_pos, n_neg });
        }
        Ok((n_pos, n_neg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint<F> {
    pub threshold: F,
    pub fpr: F,
    pub tpr: F,
}

/// ROC curve with its summary statistics. Points run from threshold +inf
/// (predict nothing positive) down to -inf (predict everything positive),
/// one step per distinct score.
#[derive(Debug, Clone, PartialEq)]
pub struct RocAnalysis<F> {
    pub points: Vec<RocPoint<F>>,
    pub auroc: F,
    pub eer: F,
    pub eer_threshold: F,
}

/// AUROC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting one half. Computed by
/// rank summation in O(n log n).
pub fn auroc<F: Float>(set: &ScoredSet<F>) -> Result<F, EvalError> {
    let (n_pos, n_neg) = set.require_two_classes()?;
    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.sort_by(|&a, &b| {
        set.items[a]
            .score
            .partial_cmp(&set.items[b].score)
            .expect("scores validated finite")
    });

    // Average ranks across tie groups, then sum the positives' ranks.
    let mut rank_sum_pos = F::zero();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len()
            && set.items[order[j + 1]].score == set.items[order[i]].score
        {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average (i + j + 2) / 2.
        let avg_rank = F::from_usize_exact(i + j + 2) / F::from_usize_exact(2);
        let ties_pos = order[i..=j]
            .iter()
            .filter(|&&idx| set.items[idx].label)
            .count();
        rank_sum_pos += avg_rank * F::from_usize_exact(ties_pos);
        i = j + 1;
    }

    let np = F::from_usize_exact(n_pos);
    let nn = F::from_usize_exact(n_neg);
    let u = rank_sum_pos - np * (np + F::one()) / F::from_usize_exact(2);
    Ok(u / (np * nn))
}

/// Builds the ROC curve over candidate thresholds (midpoints between
/// consecutive distinct scores plus +/-inf sentinels) and locates the equal
/// error rate point: minimal |fpr - fnr|, ties broken by minimal fpr + fnr,
/// then by the lowest threshold. The reported EER is (fpr + fnr) / 2 there.
pub fn roc_and_eer<F: Float>(set: &ScoredSet<F>) -> Result<RocAnalysis<F>, EvalError> {
    let (n_pos, n_neg) = set.require_two_classes()?;
    let np = F::from_usize_exact(n_pos);
    let nn = F::from_usize_exact(n_neg);

    let mut order: Vec<usize> = (0..set.items.len()).collect();
    order.sort_by(|&a, &b| {
        set.items[b]
            .score
            .partial_cmp(&set.items[a].score)
            .expect("scores validated finite")
    });

    let two = F::from_usize_exact(2);
    let mut points = vec![RocPoint {
        threshold: F::infinity(),
        fpr: F::zero(),
        tpr: F::zero(),
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let score = set.items[order[i]].score;
        let mut j = i;
        while j + 1 < order.len() && set.items[order[j + 1]].score == score {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if set.items[idx].label {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let threshold = if j + 1 < order.len() {
            (score + set.items[order[j + 1]].score) / two
        } else {
            F::neg_infinity()
        };
        points.push(RocPoint {
            threshold,
            fpr: F::from_usize_exact(fp) / nn,
            tpr: F::from_usize_exact(tp) / np,
        });
        i = j + 1;
    }

    let mut best = &points[0];
    let mut best_diff = (best.fpr - (F::one() - best.tpr)).abs();
    for point in &points[1..] {
        let fnr = F::one() - point.tpr;
        let diff = (point.fpr - fnr).abs();
        let better = diff < best_diff
            || (diff == best_diff && {
                let best_fnr = F::one() - best.tpr;
                let sum = point.fpr + fnr;
                let best_sum = best.fpr + best_fnr;
                sum < best_sum || (sum == best_sum && point.threshold < best.threshold)
            });
        if better {
            best = point;
            best_diff = diff;
        }
    }
    let eer = (best.fpr + (F::one() - best.tpr)) / two;
    let eer_threshold = best.threshold;

    Ok(RocAnalysis {
        auroc: auroc(set)?,
        eer,
        eer_threshold,
        points,
    })
}

/// Score-equals-threshold classifies positive.
pub fn apply_threshold<F: Float>(scores: &[F], threshold: F) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

struct Confusion {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

fn confusion(preds: &[bool], labels: &[bool]) -> Result<Confusion, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// (TPR + TNR) / 2; requires both classes in the ground truth.
pub fn balanced_accuracy<F: Float>(preds: &[bool], labels: &[bool]) -> Result<F, EvalError> {
    let c = confusion(preds, labels)?;
    let n_pos = c.tp + c.fn_;
    let n_neg = c.tn + c.fp;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateInput { n_pos, n_neg });
    }
    let tpr = F::from_usize_exact(c.tp) / F::from_usize_exact(n_pos);
    let tnr = F::from_usize_exact(c.tn) / F::from_usize_exact(n_neg);
    Ok((tpr + tnr) / F::from_usize_exact(2))
}

/// F1 = 2TP / (2TP + FP + FN), defined as 0 when the denominator vanishes.
pub fn f1<F: Float>(preds: &[bool], labels: &[bool]) -> Result<F, EvalError> {
    let c = confusion(preds, labels)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Ok(F::zero());
    }
    Ok(F::from_usize_exact(2 * c.tp) / F::from_usize_exact(denom))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsBundle<F> {
    pub auroc: F,
    pub eer: F,
    /// The decision threshold actually applied (derived on the calibration
    /// set, not on the evaluated set).
    pub eer_threshold: F,
    pub balanced_accuracy: F,
    pub f1: F,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Calibrated evaluation: the EER threshold is derived on `calibration`
/// only and applied to `set`. AUROC and EER are reported on `set`'s own
/// scores; balanced accuracy and F1 use the transferred threshold.
pub fn evaluate<F: Float>(
    set: &ScoredSet<F>,
    calibration: &ScoredSet<F>,
) -> Result<MetricsBundle<F>, EvalError> {
    let threshold = roc_and_eer(calibration)?.eer_threshold;
    let roc = roc_and_eer(set)?;
    let preds = apply_threshold(&set.scores(), threshold);
    let labels = set.labels();
    let (n_pos, n_neg) = set.counts();
    Ok(MetricsBundle {
        auroc: roc.auroc,
        eer: roc.eer,
        eer_threshold: threshold,
        balanced_accuracy: balanced_accuracy(&preds, &labels)?,
        f1: f1(&preds, &labels)?,
        n: set.len(),
        n_pos,
        n_neg,
    })
}

#[cfg(test)]
pub(crate) fn auroc_brute_force<F: Float>(set: &ScoredSet<F>) -> F {
    let pos: Vec<F> = set
        .items()
        .iter()
        .filter(|i| i.label)
        .map(|i| i.score)
        .collect();
    let neg: Vec<F> = set
        .items()
        .iter()
        .filter(|i| !i.label)
        .map(|i| i.score)
        .collect();
    let half = F::from_f64(0.5).unwrap();
    let mut credit = F::zero();
    for &p in &pos {
        for &n in &neg {
            if p > n {
                credit += F::one();
            } else if p == n {
                credit += half;
            }
        }
    }
    credit / (F::from_usize_exact(pos.len()) * F::from_usize_exact(neg.len()))
}
