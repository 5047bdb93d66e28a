//! Integer risk scores for binary decisions: a handful of small integer
//! points per feature plus a real intercept, mapped to a probability with
//! the logistic function.
//!
//! Training approximates the exact integer program with three steps:
//! an L1-regularized path proposes sparse supports, each solution is
//! rounded into the integer box, and a greedy ±1 local search improves the
//! class-weighted logistic loss until no single move helps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staterep::StateMatrix;
use crate::util::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub coefficients: Vec<i64>,
    pub intercept: f64,
    pub max_coef: i64,
    pub max_size: usize,
}

impl RiskScore {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let p = sigmoid(self.score(x));
        vec![1.0 - p, p]
    }

    pub fn n_nonzero(&self) -> usize {
        self.coefficients.iter().filter(|&&w| w != 0).count()
    }
}

const INTERCEPT_BOUND: f64 = 50.0;
const PATH_LEN: usize = 40;
const PATH_RATIO: f64 = 1e-4;

/// Class-weighted logistic loss on a binary problem.
pub(crate) struct WeightedProblem<'a> {
    pub data: &'a StateMatrix,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub w_sum: f64,
}

impl<'a> WeightedProblem<'a> {
    pub fn new(data: &'a StateMatrix, pos_weight: f64) -> Self {
        let y: Vec<f64> = data.labels.iter().map(|&l| if l == 1 { 1.0 } else { 0.0 }).collect();
        let w: Vec<f64> = y.iter().map(|&v| if v == 1.0 { pos_weight } else { 1.0 }).collect();
        let w_sum = w.iter().sum();
        Self { data, y, w, w_sum }
    }

    fn loss_at(&self, scores: &[f64], b: f64) -> f64 {
        let mut total = 0.0;
        for ((s, y), w) in scores.iter().zip(&self.y).zip(&self.w) {
            let z = s + b;
            // log(1 + e^z) - y z, stable for large |z|
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            total += w * (softplus - y * z);
        }
        total / self.w_sum
    }

    /// Newton iterations on the intercept for fixed linear scores.
    fn best_intercept(&self, scores: &[f64], start: f64) -> f64 {
        let mut b = start.clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);
        for _ in 0..50 {
            let (mut g, mut h) = (0.0, 0.0);
            for ((s, y), w) in scores.iter().zip(&self.y).zip(&self.w) {
                let p = sigmoid(s + b);
                g += w * (p - y);
                h += w * p * (1.0 - p);
            }
            if h < 1e-12 {
                b -= g.signum() * 1.0;
            } else {
                let step = (g / h).clamp(-5.0, 5.0);
                b -= step;
                if step.abs() < 1e-12 {
                    break;
                }
            }
            b = b.clamp(-INTERCEPT_BOUND, INTERCEPT_BOUND);
        }
        b
    }

    fn scores(&self, coef: &[f64]) -> Vec<f64> {
        self.data.rows().map(|x| coef.iter().zip(x).map(|(c, v)| c * v).sum()).collect()
    }

    fn gradient(&self, scores: &[f64], b: f64) -> (Vec<f64>, f64) {
        let d = self.data.n_features();
        let mut g = vec![0.0; d];
        let mut gb = 0.0;
        for (i, x) in self.data.rows().enumerate() {
            let r = self.w[i] * (sigmoid(scores[i] + b) - self.y[i]);
            gb += r;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        g.iter_mut().for_each(|v| *v /= self.w_sum);
        (g, gb / self.w_sum)
    }

    /// Coefficient vectors along a decreasing L1 path (proximal gradient,
    /// warm-started, intercept unpenalized).
    fn l1_path(&self) -> Vec<Vec<f64>> {
        let d = self.data.n_features();
        let mean_sq: f64 = self
            .data
            .rows()
            .zip(&self.w)
            .map(|(x, w)| w * (1.0 + x.iter().map(|v| v * v).sum::<f64>()))
            .sum::<f64>()
            / self.w_sum;
        let step = 1.0 / (0.25 * mean_sq).max(1e-12);
        let zeros = vec![0.0; self.data.n_rows()];
        let mut b = self.best_intercept(&zeros, 0.0);
        let (g0, _) = self.gradient(&zeros, b);
        let lambda_max = g0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if lambda_max <= 0.0 {
            return Vec::new();
        }
        let mut coef = vec![0.0; d];
        let mut path = Vec::with_capacity(PATH_LEN);
        for i in 0..PATH_LEN {
            let lambda = lambda_max * PATH_RATIO.powf(i as f64 / (PATH_LEN - 1) as f64);
            for _ in 0..300 {
                let s = self.scores(&coef);
                let (g, gb) = self.gradient(&s, b);
                let mut change: f64 = 0.0;
                for j in 0..d {
                    let v = coef[j] - step * g[j];
                    let shrunk = v.signum() * (v.abs() - step * lambda).max(0.0);
                    change = change.max((shrunk - coef[j]).abs());
                    coef[j] = shrunk;
                }
                let nb = b - step * gb;
                change = change.max((nb - b).abs());
                b = nb;
                if change < 1e-7 {
                    break;
                }
            }
            path.push(coef.clone());
        }
        path
    }

    /// Steepest-descent search over ±1 moves inside the integer box with at
    /// most `max_size` nonzero coefficients.
    fn local_search(&self, mut coef: Vec<i64>, max_coef: i64, max_size: usize) -> (Vec<i64>, f64, f64) {
        let xs: Vec<f64> = self.data.data.clone();
        let d = self.data.n_features();
        let n = self.data.n_rows();
        let mut scores = self.scores(&coef.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let mut b = self.best_intercept(&scores, 0.0);
        let mut loss = self.loss_at(&scores, b);
        let mut trial = vec![0.0; n];
        for _ in 0..10_000 {
            let nnz = coef.iter().filter(|&&v| v != 0).count();
            let mut best: Option<(usize, i64, f64, f64)> = None;
            for j in 0..d {
                for delta in [1i64, -1] {
                    let nv = coef[j] + delta;
                    if nv.abs() > max_coef || (coef[j] == 0 && nnz >= max_size) {
                        continue;
                    }
                    for i in 0..n {
                        trial[i] = scores[i] + delta as f64 * xs[i * d + j];
                    }
                    let tb = self.best_intercept(&trial, b);
                    let tl = self.loss_at(&trial, tb);
                    if best.as_ref().is_none_or(|bst| tl < bst.2) {
                        best = Some((j, delta, tl, tb));
                    }
                }
            }
            match best {
                Some((j, delta, tl, tb)) if tl < loss - 1e-12 => {
                    coef[j] += delta;
                    for i in 0..n {
                        scores[i] += delta as f64 * xs[i * d + j];
                    }
                    b = tb;
                    loss = tl;
                }
                _ => break,
            }
        }
        (coef, b, loss)
    }
}

fn round_into_box(coef: &[f64], max_coef: i64, max_size: usize) -> Vec<i64> {
    let mut out: Vec<i64> = coef.iter().map(|c| (c.round() as i64).clamp(-max_coef, max_coef)).collect();
    // keep the largest-magnitude entries if rounding left too many
    let mut order: Vec<usize> = (0..coef.len()).filter(|&j| out[j] != 0).collect();
    order.sort_by(|&a, &b| coef[b].abs().total_cmp(&coef[a].abs()).then(a.cmp(&b)));
    for &j in order.iter().skip(max_size) {
        out[j] = 0;
    }
    out
}

/// Fits an integer risk score on a binary task (`K = 2`, class index 1 is
/// the positive class).
pub fn fit_riskscore(train: &StateMatrix, max_coef: i64, max_size: usize, pos_weight: f64) -> Result<RiskScore> {
    if train.n_actions() != 2 {
        return Err(Error::Unsupported(format!(
            "risk scores require exactly two actions, got {}",
            train.n_actions()
        )));
    }
    super::require_two_classes(train)?;
    if max_coef < 1 || max_size < 1 || !(pos_weight > 0.0) {
        return Err(Error::Config("risk score needs max_coef ≥ 1, max_size ≥ 1 and positive class weight".into()));
    }
    let problem = WeightedProblem::new(train, pos_weight);
    let d = train.n_features();

    let mut starts: Vec<Vec<i64>> = vec![vec![0; d]];
    let mut seen_supports: Vec<Vec<bool>> = Vec::new();
    for coef in problem.l1_path() {
        let support: Vec<bool> = coef.iter().map(|c| c.abs() > 1e-10).collect();
        let size = support.iter().filter(|&&s| s).count();
        if size == 0 || size > max_size || seen_supports.contains(&support) {
            continue;
        }
        seen_supports.push(support);
        starts.push(round_into_box(&coef, max_coef, max_size));
    }
    starts.dedup();

    let mut best: Option<(Vec<i64>, f64, f64)> = None;
    for start in starts {
        let (coef, b, loss) = problem.local_search(start, max_coef, max_size);
        if best.as_ref().is_none_or(|bst| loss < bst.2 - 1e-12) {
            best = Some((coef, b, loss));
        }
    }
    let (coefficients, intercept, _) = best.expect("at least the empty start");
    Ok(RiskScore { coefficients, intercept, max_coef, max_size })
}
