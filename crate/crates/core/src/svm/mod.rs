//! Linear SVM training over embedding files, per instance or per bag.
//!
//! Bags aggregate instance embeddings with the normalized set kernel: under
//! a linear kernel, NSK similarity between bags equals the dot product of
//! their L2-normalized instance sums, so the bag feature is the normalized
//! mean vector.

pub mod io;
pub mod pipeline;
pub mod solver;

use thiserror::Error;

use crate::eval::EvalError;
use crate::num::Float;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("bag `{0}` has no instances")]
    EmptyBag(String),
    #[error("bag `{bag}` contains an instance with bag_id `{found}`")]
    MixedBagIds { bag: String, found: String },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("bag `{0}` has an all-zero mean embedding")]
    DegenerateBag(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(
        "label join failure: {unmatched} of {total} labels have no embedding row \
         (limit {limit_percent}%)"
    )]
    JoinFailure {
        unmatched: usize,
        total: usize,
        limit_percent: f64,
    },
    #[error("duplicate embedding row for bag `{bag}` level `{level}`")]
    DuplicateRow { bag: String, level: String },
    #[error("no split assignment for bag `{0}`")]
    MissingSplit(String),
    #[error("split `{0}` has no usable rows")]
    EmptySplit(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One embedding row: an instance (typically an IVD volume) inside a bag
/// (typically a whole-spine study). Vectors are stored as 32-bit floats,
/// matching the embedding file format.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingInstance {
    pub bag_id: String,
    pub instance_id: String,
    pub level: Option<String>,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: String,
    pub instances: Vec<EmbeddingInstance>,
    pub label: Option<bool>,
}

impl Bag {
    pub fn new(bag_id: String, instances: Vec<EmbeddingInstance>) -> Result<Self, SvmError> {
        if instances.is_empty() {
            return Err(SvmError::EmptyBag(bag_id));
        }
        let dim = instances[0].vector.len();
        for inst in &instances {
            if inst.bag_id != bag_id {
                return Err(SvmError::MixedBagIds {
                    bag: bag_id.clone(),
                    found: inst.bag_id.clone(),
                });
            }
            if inst.vector.len() != dim {
                return Err(SvmError::DimensionMismatch {
                    context: format!("bag `{bag_id}`"),
                    expected: dim,
                    got: inst.vector.len(),
                });
            }
            if inst.vector.iter().any(|v| !v.is_finite()) {
                return Err(SvmError::NonFinite(format!(
                    "instance `{}` of bag `{bag_id}`",
                    inst.instance_id
                )));
            }
        }
        Ok(Bag {
            bag_id,
            instances,
            label: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.instances[0].vector.len()
    }
}

/// Normalized-set-kernel bag feature: the mean instance vector scaled to
/// unit Euclidean norm. Invariant to instance order and to duplicating
/// every instance the same number of times.
pub fn bag_embed<F: Float>(bag: &Bag) -> Result<Vec<F>, SvmError> {
    if bag.instances.is_empty() {
        return Err(SvmError::EmptyBag(bag.bag_id.clone()));
    }
    let dim = bag.dim();
    let count = F::from_usize_exact(bag.instances.len());
    let mut mean = vec![F::zero(); dim];
    for inst in &bag.instances {
        if inst.vector.len() != dim {
            return Err(SvmError::DimensionMismatch {
                context: format!("bag `{}`", bag.bag_id),
                expected: dim,
                got: inst.vector.len(),
            });
        }
        for (m, &v) in mean.iter_mut().zip(&inst.vector) {
            *m += F::from_f32(v).expect("f32 convertible to scalar");
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let norm = mean.iter().map(|&m| m * m).fold(F::zero(), |a, b| a + b).sqrt();
    // Negated so that a NaN norm is also rejected.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(norm > F::zero()) || !norm.is_finite() {
        return Err(SvmError::DegenerateBag(bag.bag_id.clone()));
    }
    for m in &mut mean {
        *m /= norm;
    }
    Ok(mean)
}

/// Trained linear model: decision value is `weights . x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel<F> {
    pub weights: Vec<F>,
    pub bias: F,
    pub c_param: F,
    pub meta: TrainingMeta<F>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta<F> {
    /// Full passes over the data actually performed.
    pub iterations: usize,
    /// Largest projected-gradient KKT violation seen in the final pass.
    pub final_violation: F,
    /// True when the tolerance stopped training, false when the pass limit did.
    pub converged: bool,
}

impl<F: Float> SvmModel<F> {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[F]) -> Result<F, SvmError> {
        if x.len() != self.weights.len() {
            return Err(SvmError::DimensionMismatch {
                context: "decision input".to_string(),
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        let mut acc = self.bias;
        for (&w, &v) in self.weights.iter().zip(x) {
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Raw margins for each row; monotone in class confidence, usable directly
/// as scores for ROC analysis.
pub fn decision_scores<F: Float>(model: &SvmModel<F>, x: &[Vec<F>]) -> Result<Vec<F>, SvmError> {
    x.iter().map(|row| model.decision(row)).collect()
}
