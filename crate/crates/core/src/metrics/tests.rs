use super::*;
use proptest::prelude::*;
use rand::Rng;

/// Concordant-pair counting over all (positive, negative) pairs.
fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

#[test]
fn auroc_hand_example() {
    let auc = auroc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    assert!((auc - 0.75).abs() < 1e-12);
}

#[test]
fn auroc_extremes() {
    let y = [false, false, true, true];
    assert_eq!(auroc_binary(&[0.1, 0.2, 0.7, 0.9], &y).unwrap(), 1.0);
    assert_eq!(auroc_binary(&[0.3; 4], &y).unwrap(), 0.5);
    assert!(matches!(auroc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn multiclass_reduces_to_binary_for_two_classes() {
    let probs = vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.45, 0.55]];
    let labels = [0, 1, 1, 0];
    let bin = auroc_binary(&[0.3, 0.8, 0.4, 0.55], &[false, true, true, false]).unwrap();
    assert_eq!(auroc_multiclass(&probs, &labels).unwrap(), bin);
}

#[test]
fn multiclass_perfect_and_uniform() {
    let labels = [0, 1, 2, 2, 1];
    let onehot: Vec<Vec<f64>> = labels.iter().map(|&y| (0..3).map(|k| if k == y { 1.0 } else { 0.0 }).collect()).collect();
    assert_eq!(auroc_multiclass(&onehot, &labels).unwrap(), 1.0);
    let uniform = vec![vec![1.0 / 3.0; 3]; 5];
    assert_eq!(auroc_multiclass(&uniform, &labels).unwrap(), 0.5);
}

#[test]
fn multiclass_skips_absent_classes() {
    // class 2 never occurs
    let probs = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.7, 0.1], vec![0.5, 0.4, 0.1]];
    let labels = [0, 1, 1];
    let a0 = brute_auroc(&[0.6, 0.2, 0.5], &[true, false, false]);
    let a1 = brute_auroc(&[0.3, 0.7, 0.4], &[false, true, true]);
    assert!((auroc_multiclass(&probs, &labels).unwrap() - (a0 + a1) / 2.0).abs() < 1e-12);
    let w = auroc_multiclass_with(&probs, &labels, Averaging::Weighted).unwrap();
    assert!((w - (a0 + 2.0 * a1) / 3.0).abs() < 1e-12);
}

#[test]
fn ece_hand_example() {
    // confidences (0.9, 0.9, 0.6), correctness (1, 0, 1)
    let probs = vec![vec![0.9, 0.1], vec![0.9, 0.1], vec![0.4, 0.6]];
    let labels = [0, 1, 1];
    let expected = (2.0 / 3.0) * (0.5f64 - 0.9).abs() + (1.0 / 3.0) * (1.0f64 - 0.6).abs();
    assert!((expected - 0.4).abs() < 1e-12);
    assert!((expected_calibration_error(&probs, &labels, 10) - expected).abs() < 1e-12);
}

#[test]
fn ece_zero_for_confident_oracle() {
    let probs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert_eq!(expected_calibration_error(&probs, &[0, 1], 10), 0.0);
}

#[test]
fn sce_six_row_hand_case() {
    // K=2, probabilities symmetric in the two columns.
    let p1 = [0.15, 0.15, 0.55, 0.55, 0.95, 0.95];
    let labels = [0, 0, 1, 0, 1, 1];
    let probs: Vec<Vec<f64>> = p1.iter().map(|&p| vec![1.0 - p, p]).collect();
    // class 1 bins: (0.1,0.2]: conf .15 acc 0; (0.5,0.6]: conf .55 acc .5; (0.9,1]: conf .95 acc 1
    let c1 = (2.0 / 6.0) * 0.15 + (2.0 / 6.0) * 0.05 + (2.0 / 6.0) * 0.05;
    // class 0 bins: (0.8,0.9]: conf .85 acc 1; (0.4,0.5]: conf .45 acc .5; (0.0,0.1]: conf .05 acc 0
    let c0 = (2.0 / 6.0) * 0.15 + (2.0 / 6.0) * 0.05 + (2.0 / 6.0) * 0.05;
    let expected = (c0 + c1) / 2.0;
    assert!((static_calibration_error(&probs, &labels, 10) - expected).abs() < 1e-12);
}

#[test]
fn sce_zero_for_one_hot_correct() {
    let labels = [0, 2, 1, 2];
    let probs: Vec<Vec<f64>> = labels.iter().map(|&y| (0..3).map(|k| if k == y { 1.0 } else { 0.0 }).collect()).collect();
    assert_eq!(static_calibration_error(&probs, &labels, 10), 0.0);
}

#[test]
fn sce_small_for_calibrated_predictor() {
    let mut rng = crate::util::rng(5);
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..10_000 {
        let mut p: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let y = p.iter().position(|&x| {
            acc += x;
            u < acc
        });
        labels.push(y.unwrap_or(2));
        probs.push(p);
    }
    assert!(static_calibration_error(&probs, &labels, 10) < 0.02);
}

#[test]
fn confusion_matrix_shapes() {
    let a = [0, 1, 1, 0];
    assert_eq!(confusion_matrix(&a, &a, 2), vec![vec![2, 0], vec![0, 2]]);
    let b = [1, 0, 0, 1];
    assert_eq!(confusion_matrix(&a, &b, 2), vec![vec![0, 2], vec![2, 0]]);
    let total: usize = confusion_matrix(&a, &b, 2).iter().flatten().sum();
    assert_eq!(total, 4);
}

#[test]
fn bootstrap_identical_patients_give_zero_width() {
    let units = vec![0.7; 20];
    let est = bootstrap_ci(&units, |xs| Some(xs.iter().copied().sum::<f64>() / xs.len() as f64), 200, 0.95, 1).unwrap();
    assert!((est.ci_low - est.value).abs() < 1e-12 && (est.ci_high - est.value).abs() < 1e-12);
}

#[test]
fn bootstrap_is_deterministic_by_seed() {
    let units: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let mean = |xs: &[&f64]| Some(xs.iter().copied().sum::<f64>() / xs.len() as f64);
    assert_eq!(bootstrap_ci(&units, mean, 300, 0.95, 9).unwrap(), bootstrap_ci(&units, mean, 300, 0.95, 9).unwrap());
}

#[test]
fn bootstrap_flags_mostly_undefined_statistics() {
    let units: Vec<u8> = (0..10).map(|i| if i == 0 { 1 } else { 0 }).collect();
    let stat = |xs: &[&u8]| xs.iter().any(|&&x| x == 1).then_some(1.0);
    let est = bootstrap_ci(&units, stat, 500, 0.95, 3).unwrap();
    assert!(est.warning.is_some());
    assert!(est.n_valid < 500);
}

#[test]
fn bootstrap_mean_coverage() {
    use rand_distr::{Distribution, StandardNormal};
    let mut covered = 0;
    for trial in 0..100 {
        let mut rng = crate::util::rng(1000 + trial);
        let xs: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = bootstrap_ci(&xs, |s| Some(s.iter().copied().sum::<f64>() / s.len() as f64), 400, 0.95, trial).unwrap();
        if est.ci_low <= 0.0 && 0.0 <= est.ci_high {
            covered += 1;
        }
    }
    assert!(covered >= 90, "coverage {covered}/100");
}

fn arb_binary() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u8..8).prop_map(|v| v as f64 / 8.0), n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting((s, y) in arb_binary()) {
        prop_assert!((auroc_binary(&s, &y).unwrap() - brute_auroc(&s, &y)).abs() < 1e-9);
    }

    #[test]
    fn auroc_invariant_under_monotone_transform((s, y) in arb_binary()) {
        let t: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        prop_assert_eq!(auroc_binary(&s, &y).unwrap(), auroc_binary(&t, &y).unwrap());
    }

    #[test]
    fn auroc_label_flip_complements((s, y) in arb_binary()) {
        let flipped: Vec<bool> = y.iter().map(|b| !b).collect();
        let sum = auroc_binary(&s, &y).unwrap() + auroc_binary(&s, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_errors_lie_in_unit_interval(rows in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0usize..3), 1..60)) {
        let probs: Vec<Vec<f64>> = rows.iter().map(|&(a, b, c, _)| {
            let s = a + b + c + 1e-9;
            vec![a / s, b / s, c / s]
        }).collect();
        let labels: Vec<usize> = rows.iter().map(|r| r.3).collect();
        let ece = expected_calibration_error(&probs, &labels, 10);
        let sce = static_calibration_error(&probs, &labels, 10);
        prop_assert!((0.0..=1.0).contains(&ece));
        prop_assert!((0.0..=1.0).contains(&sce));
    }
}
