use super::*;
use crate::staterep::StateMatrix;
use proptest::prelude::*;
use rand::Rng;

fn names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

fn classes(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("a{j}")).collect()
}

fn matrix(rows: &[Vec<f64>], labels: &[usize], k: usize) -> StateMatrix {
    StateMatrix::from_rows(names(rows[0].len()), classes(k), rows, labels)
}

/// Random 3-class problem whose labels depend on the features.
fn noisy_problem(n: usize, d: usize, seed: u64) -> StateMatrix {
    let mut rng = crate::util::rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut z = vec![x[0], x[1 % d] - x[0], 0.3];
        z.iter_mut().for_each(|v| *v *= 2.0);
        crate::util::softmax_in_place(&mut z);
        let u: f64 = rng.random();
        let y = if u < z[0] { 0 } else if u < z[0] + z[1] { 1 } else { 2 };
        rows.push(x);
        labels.push(y);
    }
    matrix(&rows, &labels, 3)
}

// ── logistic regression ────────────────────────────────────────────────

#[test]
fn logreg_separable_matches_grid_search() {
    let m = matrix(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]], &[0, 0, 1, 1], 2);
    let c = 1e3;
    let fit = logreg::fit_logreg(&m, c, 2000).unwrap();
    let p = fit.predict_proba(&[1.0])[1];
    assert!(p > 0.9, "p = {p}");

    // Two-class softmax with penalty on both weight rows is a binary logistic
    // model in (beta, beta0) = (w1 - w0, b1 - b0) with penalty beta^2 / (4 C N).
    let n = 4.0;
    let objective = |beta: f64, beta0: f64| {
        let nll = |z: f64, y: f64| (1.0 + z.exp()).ln() - y * z;
        (2.0 * nll(beta0, 0.0) + 2.0 * nll(beta + beta0, 1.0)) / n + beta * beta / (4.0 * c * n)
    };
    let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
    let mut beta = 0.0;
    while beta <= 40.0 {
        let mut beta0 = -25.0;
        while beta0 <= 0.0 {
            let v = objective(beta, beta0);
            if v < best {
                best = v;
                arg = (beta, beta0);
            }
            beta0 += 0.02;
        }
        beta += 0.02;
    }
    let p_grid = crate::util::sigmoid(arg.0 + arg.1);
    assert!((p - p_grid).abs() < 1e-3, "fit {p} vs grid {p_grid}");
}

#[test]
fn logreg_extreme_penalty_returns_priors() {
    let m = noisy_problem(300, 3, 1);
    let fit = logreg::fit_logreg(&m, 1e-9, 2000).unwrap();
    let priors: Vec<f64> = (0..3).map(|k| m.labels.iter().filter(|&&y| y == k).count() as f64 / 300.0).collect();
    for x in m.rows().take(20) {
        for (p, q) in fit.predict_proba(x).iter().zip(&priors) {
            assert!((p - q).abs() < 0.01, "{p} vs {q}");
        }
    }
}

#[test]
fn logreg_is_invariant_to_row_order() {
    let m = noisy_problem(200, 4, 2);
    let mut idx: Vec<usize> = (0..200).collect();
    idx.reverse();
    idx.swap(3, 150);
    let permuted = m.select_rows(&idx);
    let a = logreg::fit_logreg(&m, 1.0, 2000).unwrap();
    let b = logreg::fit_logreg(&permuted, 1.0, 2000).unwrap();
    for (x, y) in a.weights.iter().chain(&a.intercepts).zip(b.weights.iter().chain(&b.intercepts)) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
}

#[test]
fn logreg_satisfies_first_order_conditions() {
    for (c, seed) in [(0.01, 3), (1.0, 4), (100.0, 5)] {
        let m = noisy_problem(250, 5, seed);
        let fit = logreg::fit_logreg(&m, c, 2000).unwrap();
        let obj = logreg::Objective::new(&m, c);
        let theta: Vec<f64> = fit.weights.iter().chain(&fit.intercepts).copied().collect();
        let mut g = vec![0.0; theta.len()];
        obj.eval(&theta, &mut g);
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(gmax <= 1e-5, "C={c}: gradient {gmax}");
    }
}

#[test]
fn logreg_zero_input_gives_softmax_of_intercepts() {
    let m = noisy_problem(100, 2, 6);
    let fit = logreg::fit_logreg(&m, 1.0, 2000).unwrap();
    let mut expected = fit.intercepts.clone();
    crate::util::softmax_in_place(&mut expected);
    assert_eq!(fit.predict_proba(&[0.0, 0.0]), expected);
}

#[test]
fn single_class_training_is_a_fit_error() {
    let m = matrix(&[vec![0.0], vec![1.0]], &[1, 1], 2);
    assert!(matches!(logreg::fit_logreg(&m, 1.0, 100), Err(crate::Error::Fit(_))));
    let opts = mlp::MlpOptions { hidden: vec![4], learning_rate: 0.01, batch_size: 2, max_epochs: 2, patience: 1, seed: 0 };
    assert!(matches!(mlp::fit_mlp(&m, &m, &opts), Err(crate::Error::Fit(_))));
    assert!(matches!(riskscore::fit_riskscore(&m, 3, 3, 1.0), Err(crate::Error::Fit(_))));
}

// ── decision tree ──────────────────────────────────────────────────────

#[test]
fn tree_perfect_split() {
    let m = matrix(&[vec![0.0, 5.0], vec![0.1, 1.0], vec![0.9, 5.0], vec![1.0, 1.0]], &[0, 0, 1, 1], 2);
    let t = tree::fit_tree(&m, Criterion::Gini, Some(1), 2).unwrap();
    assert_eq!((t.depth(), t.n_leaves()), (1, 2));
    let acc = m.rows().zip(&m.labels).filter(|(x, &y)| crate::util::argmax(&t.predict_proba(x)) == y).count();
    assert_eq!(acc, 4);
    match &t.nodes[0] {
        tree::Node::Split { feature, threshold, .. } => {
            assert_eq!(*feature, 0);
            assert!((threshold - 0.5).abs() < 1e-12);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn tree_min_samples_split_binds() {
    let m = noisy_problem(100, 3, 7);
    let t = tree::fit_tree(&m, Criterion::Entropy, Some(10), 128).unwrap();
    assert_eq!((t.depth(), t.n_leaves()), (0, 1));
}

#[test]
fn tree_ties_go_to_lowest_feature_index() {
    // features 0 and 1 are identical, feature 2 is a relabelled copy
    let rows: Vec<Vec<f64>> = (0..8).map(|i| {
        let v = (i / 4) as f64;
        vec![v, v, 1.0 - v]
    }).collect();
    let labels: Vec<usize> = (0..8).map(|i| i / 4).collect();
    let m = matrix(&rows, &labels, 2);
    let t = tree::fit_tree(&m, Criterion::Gini, Some(3), 2).unwrap();
    assert!(matches!(t.nodes[0], tree::Node::Split { feature: 0, .. }));
}

#[test]
fn tree_leaf_probabilities_are_exact_frequencies() {
    let m = noisy_problem(400, 3, 8);
    let t = tree::fit_tree(&m, Criterion::Gini, Some(4), 10).unwrap();
    let mut routed: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (x, &y) in m.rows().zip(&m.labels) {
        routed.entry(t.leaf_for(x)).or_insert_with(|| vec![0; 3])[y] += 1;
    }
    for (leaf, counts) in routed {
        match &t.nodes[leaf] {
            tree::Node::Leaf { counts: stored } => assert_eq!(stored, &counts),
            _ => panic!("not a leaf"),
        }
    }
}

#[test]
fn tree_single_class_is_depth_zero() {
    let m = matrix(&[vec![0.0], vec![1.0], vec![2.0]], &[2, 2, 2], 3);
    let t = tree::fit_tree(&m, Criterion::Gini, None, 2).unwrap();
    assert_eq!(t.n_leaves(), 1);
    assert_eq!(t.predict_proba(&[5.0]), vec![0.0, 0.0, 1.0]);
}

#[test]
fn tree_exports_dot() {
    let m = noisy_problem(60, 2, 9);
    let t = tree::fit_tree(&m, Criterion::Gini, Some(2), 2).unwrap();
    let dot = t.to_dot(&m.feature_names, &m.action_labels);
    assert!(dot.starts_with("digraph tree {"));
    assert_eq!(dot.matches("->").count(), 2 * (t.n_leaves() - 1));
}

// ── risk score ─────────────────────────────────────────────────────────

#[test]
fn risk_score_of_zero_is_one_half() {
    let rs = RiskScore { coefficients: vec![2, -1], intercept: -1.0, max_coef: 3, max_size: 2 };
    assert_eq!(rs.predict_proba(&[1.0, 1.0]), vec![0.5, 0.5]);
}

/// Binary task over 10 binary features; `signal` lists (feature, log-odds) effects.
fn binary_task(n: usize, signal: &[(usize, f64)], base: f64, seed: u64) -> StateMatrix {
    let mut rng = crate::util::rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..10).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
        let z = base + signal.iter().map(|&(j, w)| w * x[j]).sum::<f64>();
        labels.push(usize::from(rng.random::<f64>() < crate::util::sigmoid(z)));
        rows.push(x);
    }
    matrix(&rows, &labels, 2)
}

/// Weighted log-loss with the intercept found by bisection on the derivative.
fn oracle_loss(m: &StateMatrix, coef: &[i64], pos_weight: f64) -> f64 {
    let s: Vec<f64> = m.rows().map(|x| coef.iter().zip(x).map(|(&c, v)| c as f64 * v).sum()).collect();
    let w = |y: usize| if y == 1 { pos_weight } else { 1.0 };
    let deriv = |b: f64| -> f64 {
        s.iter().zip(&m.labels).map(|(si, &y)| w(y) * (crate::util::sigmoid(si + b) - y as f64)).sum()
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 { hi = mid } else { lo = mid }
    }
    let b = 0.5 * (lo + hi);
    let total_w: f64 = m.labels.iter().map(|&y| w(y)).sum();
    s.iter()
        .zip(&m.labels)
        .map(|(si, &y)| {
            let p = crate::util::sigmoid(si + b);
            -w(y) * if y == 1 { p.ln() } else { (1.0 - p).ln() }
        })
        .sum::<f64>()
        / total_w
}

/// Best model with a single nonzero integer coefficient, by enumeration.
fn best_single_feature(m: &StateMatrix, max_coef: i64, pos_weight: f64) -> (usize, i64, f64) {
    let mut best = (0, 0, f64::INFINITY);
    for j in 0..m.n_features() {
        for v in -max_coef..=max_coef {
            if v == 0 {
                continue;
            }
            let mut coef = vec![0; m.n_features()];
            coef[j] = v;
            let l = oracle_loss(m, &coef, pos_weight);
            if l < best.2 {
                best = (j, v, l);
            }
        }
    }
    best
}

#[test]
fn risk_score_size_one_picks_the_best_single_feature() {
    let m = binary_task(2000, &[(3, 2.5), (7, 0.6)], -1.2, 10);
    let (j, v, _) = best_single_feature(&m, 5, 1.0);
    assert_eq!(j, 3);
    let rs = riskscore::fit_riskscore(&m, 5, 1, 1.0).unwrap();
    let nz: Vec<usize> = (0..10).filter(|&k| rs.coefficients[k] != 0).collect();
    assert_eq!(nz, vec![3]);
    assert_eq!(rs.coefficients[3], v);
}

#[test]
fn risk_score_respects_box_and_size() {
    let m = binary_task(1500, &[(0, 1.5), (2, -2.0), (5, 1.0), (9, 3.0)], -0.5, 11);
    for (max_coef, max_size) in [(3, 3), (8, 7), (4, 2)] {
        let rs = riskscore::fit_riskscore(&m, max_coef, max_size, 2.0).unwrap();
        assert!(rs.coefficients.iter().all(|c| c.abs() <= max_coef));
        assert!(rs.n_nonzero() <= max_size);
        let (_, _, single) = best_single_feature(&m, max_coef, 2.0);
        assert!(oracle_loss(&m, &rs.coefficients, 2.0) <= single + 1e-9);
    }
}

#[test]
fn positive_weight_shifts_predictions_toward_positives() {
    let m = binary_task(2000, &[(1, 1.0), (4, 0.8)], -2.0, 12);
    let recall = |rs: &RiskScore| {
        let pos: Vec<&[f64]> = m.rows().zip(&m.labels).filter(|(_, &y)| y == 1).map(|(x, _)| x).collect();
        pos.iter().filter(|x| rs.predict_proba(x)[1] >= 0.5).count() as f64 / pos.len() as f64
    };
    let r1 = recall(&riskscore::fit_riskscore(&m, 5, 5, 1.0).unwrap());
    let r5 = recall(&riskscore::fit_riskscore(&m, 5, 5, 5.0).unwrap());
    assert!(r5 >= r1, "recall {r5} < {r1}");
    assert!(r5 > 0.5);
}

#[test]
fn risk_score_rejects_multiclass() {
    let m = noisy_problem(50, 2, 13);
    assert!(matches!(riskscore::fit_riskscore(&m, 3, 3, 1.0), Err(crate::Error::Unsupported(_))));
}

// ── MLP ────────────────────────────────────────────────────────────────

#[test]
fn mlp_gradient_matches_finite_differences() {
    let m = noisy_problem(12, 5, 14);
    let rows: Vec<usize> = (0..12).collect();
    for hidden in HyperparamSpace::for_profile(DatasetProfile::Ra).mlp_hidden {
        let net = Mlp::init(5, &hidden, 3, 99);
        let mut net = net;
        // nonzero biases so no pre-activation sits exactly on the ReLU kink
        let mut p = net.flat_params();
        let mut rng = crate::util::rng(15);
        p.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
        net.set_flat_params(&p);
        let (_, grad) = net.loss_and_grad(&m, &rows);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] = p[i] + h;
            net.set_flat_params(&q);
            let up = net.loss_and_grad(&m, &rows).0;
            q[i] = p[i] - h;
            net.set_flat_params(&q);
            let down = net.loss_and_grad(&m, &rows).0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
        net.set_flat_params(&p);
        assert!(worst < 1e-5, "hidden {hidden:?}: relative error {worst}");
    }
}

#[test]
fn mlp_learns_xor() {
    let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let labels = [0, 1, 1, 0];
    let m = matrix(&rows, &labels, 2);
    let empty = m.select_rows(&[]);
    let opts = mlp::MlpOptions { hidden: vec![16], learning_rate: 0.01, batch_size: 4, max_epochs: 500, patience: 500, seed: 3 };
    let (net, trace) = mlp::fit_mlp(&m, &empty, &opts).unwrap();
    assert!(trace.epochs_run <= 500);
    for (x, &y) in rows.iter().zip(&labels) {
        assert_eq!(crate::util::argmax(&net.predict_proba(x)), y);
    }
}

#[test]
fn early_stopping_counts_epochs_past_the_best() {
    let mut es = mlp::EarlyStopping::new(5);
    let mut stopped_at = None;
    for epoch in 1..=20 {
        let loss = epoch as f64; // strictly worsening after epoch 1
        if es.update(epoch, loss) == mlp::StopDecision::Stop {
            stopped_at = Some(epoch);
            break;
        }
    }
    assert_eq!(es.best_epoch, 1);
    assert_eq!(stopped_at, Some(1 + 6));
}

#[test]
fn mlp_fits_nonlinear_task_at_least_as_well_as_logreg() {
    // label depends on the sign of x0 * x1: linearly inseparable
    let mut rng = crate::util::rng(16);
    let rows: Vec<Vec<f64>> = (0..600).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let labels: Vec<usize> = rows.iter().map(|x| usize::from(x[0] * x[1] > 0.0)).collect();
    let m = matrix(&rows, &labels, 2);
    let lr = PolicyModel::new(&m, ModelParams::Lr(logreg::fit_logreg(&m, 1e3, 2000).unwrap()));
    let opts = mlp::MlpOptions { hidden: vec![64, 64], learning_rate: 0.01, batch_size: 64, max_epochs: 200, patience: 200, seed: 4 };
    let empty = m.select_rows(&[]);
    let net = PolicyModel::new(&m, ModelParams::Mlp(mlp::fit_mlp(&m, &empty, &opts).unwrap().0));
    let loss = |pm: &PolicyModel| crate::metrics::log_loss(&pm.predict_matrix(&m).unwrap(), &m.labels);
    assert!(loss(&lr) >= loss(&net) - 1e-6, "lr {} mlp {}", loss(&lr), loss(&net));
}

// ── contract ───────────────────────────────────────────────────────────

fn all_models(m: &StateMatrix) -> Vec<PolicyModel> {
    let configs = [
        ModelConfig::Lr { c: 1.0, max_iter: 500 },
        ModelConfig::Dt { criterion: Criterion::Gini, max_depth: 4, min_samples_split: 4 },
        ModelConfig::Mlp { hidden: vec![8], learning_rate: 0.01, batch_size: 16, max_epochs: 5, patience: 2 },
    ];
    configs.iter().map(|c| fit_model(c, m, m, 1).unwrap()).collect()
}

#[test]
fn predictions_are_on_the_simplex_and_names_are_checked() {
    let m = noisy_problem(120, 3, 17);
    for model in all_models(&m) {
        for x in m.rows() {
            let p = model.predict_row(x);
            assert_eq!(p.len(), 3);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let wrong: Vec<String> = (0..3).map(|j| format!("g{j}")).collect();
        assert!(matches!(model.predict_proba(&wrong, m.row(0)), Err(crate::Error::FeatureMismatch(_))));
    }
}

#[test]
fn models_round_trip_through_json() {
    let m = binary_task(300, &[(0, 2.0)], -1.0, 18);
    let mut models = all_models(&m);
    models.push(fit_model(&ModelConfig::Rs { max_coef: 3, max_size: 3, pos_weight: 1.0 }, &m, &m, 0).unwrap());
    for model in models {
        let json = model.to_json().unwrap();
        let back = PolicyModel::from_json(&json).unwrap();
        assert_eq!(back.kind(), model.kind());
        for x in m.rows().take(10) {
            assert_eq!(back.predict_row(x), model.predict_row(x));
        }
    }
    let mut v: serde_json::Value = serde_json::from_str(&all_models(&m)[0].to_json().unwrap()).unwrap();
    v["format_version"] = serde_json::json!(99);
    assert!(PolicyModel::from_json(&v.to_string()).is_err());
}

#[test]
fn class_pure_tree_is_certain() {
    let m = matrix(&[vec![0.3, 1.0], vec![0.7, 2.0]], &[1, 1], 3);
    let t = fit_model(&ModelConfig::Dt { criterion: Criterion::Entropy, max_depth: 5, min_samples_split: 2 }, &m, &m, 0).unwrap();
    for x in m.rows() {
        assert!(t.predict_row(x)[1] >= 0.99);
    }
}

// ── hyperparameters ────────────────────────────────────────────────────

#[test]
fn hyperparameter_draws_come_from_the_grids() {
    let space = HyperparamSpace::for_profile(DatasetProfile::SepsisCopd);
    let draws = sample_hyperparams(&space, ModelKind::Lr, 7, 5);
    assert_eq!(draws.len(), 5);
    for d in &draws {
        match d {
            ModelConfig::Lr { c, max_iter } => {
                assert!(space.lr_c.contains(c));
                assert_eq!(*max_iter, 2000);
            }
            other => panic!("{other:?}"),
        }
    }
    assert_eq!(draws, sample_hyperparams(&space, ModelKind::Lr, 7, 5));
    for d in sample_hyperparams(&space, ModelKind::Dt, 8, 50) {
        match d {
            ModelConfig::Dt { max_depth, .. } => assert!([3, 5, 7, 9, 11, 13, 15].contains(&max_depth)),
            other => panic!("{other:?}"),
        }
    }
    let ra = HyperparamSpace::for_profile(DatasetProfile::Ra);
    assert_eq!(ra.dt_max_depth, vec![2, 3, 4, 5, 6, 7, 8]);
    assert_eq!(ra.mlp_patience, 5);
    assert_eq!(space.mlp_patience, 25);
    assert_eq!(DatasetProfile::SepsisCopd.selection_metric(), SelectionMetric::Accuracy);
    assert_eq!(DatasetProfile::Ra.selection_metric(), SelectionMetric::Auroc);
}

proptest! {
    #[test]
    fn risk_score_coefficients_stay_in_the_box(seed in 0u64..1000, max_coef in 1i64..5, max_size in 1usize..4) {
        let m = binary_task(200, &[(0, 1.0), (1, -1.5), (2, 2.0)], -0.3, seed);
        prop_assume!(m.n_present_classes() == 2);
        let rs = riskscore::fit_riskscore(&m, max_coef, max_size, 1.0).unwrap();
        prop_assert!(rs.coefficients.iter().all(|c| c.abs() <= max_coef));
        prop_assert!(rs.n_nonzero() <= max_size);
    }
}
