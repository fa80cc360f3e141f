//! Dual coordinate descent for the L1-loss linear SVM.
//!
//! Minimizes (1/2)||w||^2 + C * sum_i max(0, 1 - y_i (w . x_i + b)) with the
//! bias folded in as a constant unit feature (so the bias is regularized
//! with the weights). One dual variable per example is box-constrained to
//! [0, C_i]; coordinates are visited in a seeded random permutation each
//! pass, and training stops when the largest projected-gradient violation
//! in a pass drops to the tolerance or the pass limit is reached.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SvmError, SvmModel, TrainingMeta};
use crate::num::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams<F> {
    pub c: F,
    pub tolerance: F,
    pub max_passes: usize,
    pub seed: u64,
    /// Weight each class's C by inverse class frequency.
    pub balance_classes: bool,
}

impl<F: Float> Default for SvmParams<F> {
    fn default() -> Self {
        SvmParams {
            c: F::one(),
            tolerance: F::from_f64(1e-4).unwrap(),
            max_passes: 1000,
            seed: 0,
            balance_classes: false,
        }
    }
}

// Negated comparisons here are NaN-rejecting: `!(c > 0)` also fails NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn validate_inputs<F: Float>(
    x: &[Vec<F>],
    y: &[bool],
    params: &SvmParams<F>,
) -> Result<usize, SvmError> {
    if x.is_empty() {
        return Err(SvmError::InvalidParameter("empty training set".to_string()));
    }
    if x.len() != y.len() {
        return Err(SvmError::InvalidParameter(format!(
            "feature/label count mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(SvmError::InvalidParameter(
            "zero-dimensional features".to_string(),
        ));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != dim {
            return Err(SvmError::DimensionMismatch {
                context: format!("training row {i}"),
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite(format!("training row {i}")));
        }
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(SvmError::SingleClass);
    }
    if !(params.c > F::zero()) {
        return Err(SvmError::InvalidParameter(format!(
            "C must be positive, got {}",
            params.c
        )));
    }
    if !(params.tolerance >= F::zero()) {
        return Err(SvmError::InvalidParameter(format!(
            "tolerance must be non-negative, got {}",
            params.tolerance
        )));
    }
    if params.max_passes == 0 {
        return Err(SvmError::InvalidParameter(
            "max_passes must be at least 1".to_string(),
        ));
    }
    Ok(dim)
}

/// Raw solve over bias-augmented features; returns the augmented weight
/// vector (last component is the bias), the dual variables and the meta.
#[allow(clippy::type_complexity)]
pub(crate) fn solve_dual<F: Float>(
    x: &[Vec<F>],
    y: &[bool],
    params: &SvmParams<F>,
) -> Result<(Vec<F>, Vec<F>, TrainingMeta<F>), SvmError> {
    let dim = validate_inputs(x, y, params)?;
    let n = x.len();

    let n_pos = y.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    let (c_pos, c_neg) = if params.balance_classes {
        let nf = F::from_usize_exact(n);
        let two = F::from_usize_exact(2);
        (
            params.c * nf / (two * F::from_usize_exact(n_pos)),
            params.c * nf / (two * F::from_usize_exact(n_neg)),
        )
    } else {
        (params.c, params.c)
    };

    // Diagonal of the augmented Gram matrix; >= 1 because of the bias slot.
    let q_diag: Vec<F> = x
        .iter()
        .map(|row| row.iter().map(|&v| v * v).fold(F::one(), |a, b| a + b))
        .collect();

    let sign = |label: bool| if label { F::one() } else { -F::one() };
    let box_c = |label: bool| if label { c_pos } else { c_neg };

    let mut w = vec![F::zero(); dim + 1];
    let mut alpha = vec![F::zero(); n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();

    let mut passes = 0;
    let mut violation = F::infinity();
    let mut converged = false;
    while passes < params.max_passes {
        order.shuffle(&mut rng);
        let mut max_violation = F::zero();
        for &i in &order {
            let yi = sign(y[i]);
            let ci = box_c(y[i]);
            let row = &x[i];

            let mut wx = w[dim];
            for (&wj, &xj) in w.iter().zip(row) {
                wx += wj * xj;
            }
            let grad = yi * wx - F::one();

            let projected = if alpha[i] <= F::zero() {
                grad.min(F::zero())
            } else if alpha[i] >= ci {
                grad.max(F::zero())
            } else {
                grad
            };
            max_violation = max_violation.max(projected.abs());
            if projected == F::zero() {
                continue;
            }

            let updated = (alpha[i] - grad / q_diag[i]).max(F::zero()).min(ci);
            let delta = updated - alpha[i];
            if delta != F::zero() {
                alpha[i] = updated;
                let step = delta * yi;
                for (wj, &xj) in w.iter_mut().zip(row) {
                    *wj += step * xj;
                }
                w[dim] += step;
            }
        }
        passes += 1;
        violation = max_violation;
        if max_violation <= params.tolerance {
            converged = true;
            break;
        }
    }

    Ok((
        w,
        alpha,
        TrainingMeta {
            iterations: passes,
            final_violation: violation,
            converged,
        },
    ))
}

pub fn train_linear_svm<F: Float>(
    x: &[Vec<F>],
    y: &[bool],
    params: &SvmParams<F>,
) -> Result<SvmModel<F>, SvmError> {
    let (mut w, _alpha, meta) = solve_dual(x, y, params)?;
    let bias = w.pop().expect("augmented weight vector is non-empty");
    Ok(SvmModel {
        weights: w,
        bias,
        c_param: params.c,
        meta,
    })
}

/// Primal objective with uniform C: (1/2)(||w||^2 + b^2) + C * total hinge.
/// The bias term is regularized because it is trained as a unit feature.
pub fn primal_objective<F: Float>(weights: &[F], bias: F, x: &[Vec<F>], y: &[bool], c: F) -> F {
    let two = F::from_usize_exact(2);
    let mut obj = (weights.iter().map(|&w| w * w).fold(F::zero(), |a, b| a + b) + bias * bias)
        / two;
    for (row, &label) in x.iter().zip(y) {
        let yi = if label { F::one() } else { -F::one() };
        let mut wx = bias;
        for (&w, &v) in weights.iter().zip(row) {
            wx += w * v;
        }
        obj += c * (F::one() - yi * wx).max(F::zero());
    }
    obj
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tight<F: Float>() -> SvmParams<F> {
        SvmParams {
            tolerance: F::from_f64(1e-8).unwrap(),
            max_passes: 100_000,
            ..SvmParams::default()
        }
    }

    #[test]
    fn two_point_problem_recovers_unit_margin_separator() {
        let x = vec![vec![-1.0f64], vec![1.0]];
        let y = vec![false, true];
        let params = SvmParams {
            c: 100.0,
            ..tight()
        };
        let model = train_linear_svm(&x, &y, &params).unwrap();
        // Max-margin solution through the origin: w = 1, b = 0.
        assert!((model.weights[0] - 1.0).abs() < 1e-2, "w = {}", model.weights[0]);
        assert!(model.bias.abs() < 1e-2, "b = {}", model.bias);
        assert!(model.meta.converged);
        assert!(model.meta.final_violation <= params.tolerance);
    }

    #[test]
    fn separable_blobs_reach_perfect_training_accuracy() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let positive = i % 2 == 0;
            let center = if positive { 2.0 } else { 0.0 };
            x.push(vec![
                center + 0.35 * rng.sample::<f64, _>(rand_distr::StandardNormal),
                center + 0.35 * rng.sample::<f64, _>(rand_distr::StandardNormal),
            ]);
            y.push(positive);
        }
        let params = SvmParams {
            c: 10.0,
            ..tight()
        };
        let model = train_linear_svm(&x, &y, &params).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(row, &label)| (model.decision(row).unwrap() >= 0.0) == label)
            .count();
        assert_eq!(correct, 200);
    }

    #[test]
    fn single_class_and_bad_params_are_rejected() {
        let x = vec![vec![0.0f64], vec![1.0]];
        assert!(matches!(
            train_linear_svm(&x, &[true, true], &SvmParams::default()),
            Err(SvmError::SingleClass)
        ));
        assert!(matches!(
            train_linear_svm(
                &x,
                &[true, false],
                &SvmParams {
                    c: 0.0,
                    ..SvmParams::default()
                }
            ),
            Err(SvmError::InvalidParameter(_))
        ));
        let bad = vec![vec![f64::NAN], vec![1.0]];
        assert!(matches!(
            train_linear_svm(&bad, &[true, false], &SvmParams::default()),
            Err(SvmError::NonFinite(_))
        ));
    }

    #[test]
    fn pass_limit_is_recorded_when_tolerance_is_unreachable() {
        let x = vec![vec![-1.0f64], vec![1.0], vec![-0.9], vec![0.9]];
        let y = vec![false, true, true, false];
        let params = SvmParams {
            c: 100.0,
            tolerance: 0.0,
            max_passes: 3,
            ..SvmParams::default()
        };
        let model = train_linear_svm(&x, &y, &params).unwrap();
        assert!(!model.meta.converged);
        assert_eq!(model.meta.iterations, 3);
    }

    #[test]
    fn training_is_seed_deterministic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let a = train_linear_svm(&x, &y, &SvmParams::default()).unwrap();
        let b = train_linear_svm(&x, &y, &SvmParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_class_weights_shift_the_boundary_toward_the_minority() {
        // 1 positive and 9 negatives at the very same point: irreconcilable.
        // Uniform C concedes the minority (decision -1 there); inverse-
        // frequency weighting balances the two hinge pulls (decision 0).
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![0.0]).collect();
        let mut y = vec![true];
        y.extend(std::iter::repeat_n(false, 9));
        let plain = train_linear_svm(&x, &y, &tight()).unwrap();
        let balanced = train_linear_svm(
            &x,
            &y,
            &SvmParams {
                balance_classes: true,
                ..tight()
            },
        )
        .unwrap();
        assert!((plain.decision(&[0.0]).unwrap() - (-1.0)).abs() < 1e-3);
        assert!(balanced.decision(&[0.0]).unwrap().abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dual_variables_stay_in_the_box_and_violation_meets_tolerance(
            seed in 0u64..200,
            n in 4usize..24,
            dim in 1usize..5,
            c in 0.25f64..8.0
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let params = SvmParams {
                c,
                tolerance: 1e-6,
                max_passes: 50_000,
                seed,
                balance_classes: false,
            };
            let (_, alpha, meta) = solve_dual(&x, &y, &params).unwrap();
            for &a in &alpha {
                prop_assert!(a >= 0.0 && a <= c + 1e-12);
            }
            if meta.converged {
                prop_assert!(meta.final_violation <= params.tolerance);
            }
        }

        #[test]
        fn decision_argsort_invariant_under_positive_rescaling(
            seed in 0u64..100,
            scale in 0.1f64..50.0
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
            let model = train_linear_svm(&x, &y, &SvmParams::default()).unwrap();
            let scaled = SvmModel {
                weights: model.weights.iter().map(|&w| w * scale).collect(),
                bias: model.bias * scale,
                ..model.clone()
            };
            let s1 = super::super::decision_scores(&model, &x).unwrap();
            let s2 = super::super::decision_scores(&scaled, &x).unwrap();
            let sorted = |s: &[f64]| {
                let mut idx: Vec<usize> = (0..s.len()).collect();
                idx.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap());
                idx
            };
            prop_assert_eq!(sorted(&s1), sorted(&s2));
        }

        #[test]
        fn large_c_separates_any_separable_set(
            seed in 0u64..100
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // Separable by construction: margin 0.4 around x = 0.
            let x: Vec<Vec<f64>> = (0..30)
                .map(|i| {
                    let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                    vec![side * rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)]
                })
                .collect();
            let y: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
            let params = SvmParams {
                c: 1000.0,
                tolerance: 1e-8,
                max_passes: 200_000,
                seed,
                balance_classes: false,
            };
            let model = train_linear_svm(&x, &y, &params).unwrap();
            let hinge: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, &label)| {
                    let yi = if label { 1.0 } else { -1.0 };
                    (1.0 - yi * model.decision(row).unwrap()).max(0.0)
                })
                .sum();
            prop_assert!(hinge < 1e-6, "hinge loss {hinge}");
        }
    }
}
