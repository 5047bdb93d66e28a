//! Multinomial (softmax) logistic regression with an L2 penalty on the
//! weights, fitted to the convex optimum with L-BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staterep::StateMatrix;
use crate::util;

/// Stopping tolerance on the max-norm of the gradient of the mean objective.
pub const GRAD_TOL: f64 = 1e-8;
const HISTORY: usize = 10;
/// Consecutive iterations without a relative decrease above `STALL_FTOL`
/// after which the objective is treated as converged to rounding.
const STALL_LIMIT: usize = 5;
const STALL_FTOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    /// `K × d`, row-major.
    pub weights: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub n_features: usize,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogisticRegression {
    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let d = self.n_features;
        let mut z: Vec<f64> = self
            .intercepts
            .iter()
            .enumerate()
            .map(|(k, b)| b + dot(&self.weights[k * d..(k + 1) * d], x))
            .collect();
        util::softmax_in_place(&mut z);
        z
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Penalized objective `mean CE + Σ_j q_j ‖W_·j‖² / (2 C N)` and its gradient;
/// `q` is all ones for the plain problem.
pub(crate) struct Objective<'a> {
    pub data: &'a StateMatrix,
    pub c: f64,
    pub column_penalty: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(data: &'a StateMatrix, c: f64) -> Self {
        Self { data, c, column_penalty: vec![1.0; data.n_features()] }
    }

    pub fn n_params(&self) -> usize {
        self.data.n_actions() * (self.data.n_features() + 1)
    }

    pub fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.data;
        let (k, d, n) = (m.n_actions(), m.n_features(), m.n_rows());
        let (w, b) = theta.split_at(k * d);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (gw, gb) = grad.split_at_mut(k * d);
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        for (x, &y) in m.rows().zip(&m.labels) {
            for c in 0..k {
                z[c] = b[c] + dot(&w[c * d..(c + 1) * d], x);
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[y];
            for c in 0..k {
                let r = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
                gb[c] += r;
                for (g, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let pen = 1.0 / (self.c * n as f64);
        let mut reg = 0.0;
        for (j, (g, wi)) in gw.iter_mut().zip(w).enumerate() {
            let q = self.column_penalty[j % d];
            *g = *g * inv_n + pen * q * wi;
            reg += q * wi * wi;
        }
        gb.iter_mut().for_each(|g| *g *= inv_n);
        loss * inv_n + 0.5 * pen * reg
    }
}

/// Column means and population standard deviations; constant columns get scale 1.
fn column_moments(m: &StateMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (m.n_rows() as f64, m.n_features());
    let mut mean = vec![0.0; d];
    for row in m.rows() {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v / n);
    }
    let mut var = vec![0.0; d];
    for row in m.rows() {
        for j in 0..d {
            var[j] += (row[j] - mean[j]).powi(2) / n;
        }
    }
    let scale = var.iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

/// Limited-memory BFGS with a backtracking line search. Returns the final
/// point, the number of iterations and the final gradient max-norm.
pub(crate) fn lbfgs(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize, f64) {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iter = 0;
    let mut stalled = 0;
    while iter < max_iter && inf_norm(&g) > tol && stalled < STALL_LIMIT {
        iter += 1;
        // two-loop recursion for the search direction
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = mem
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or_else(|| 1.0 / inf_norm(&g).max(1.0));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            mem.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = f(&x_new, &mut g_new);
            let armijo = f_new <= fx + 1e-4 * step * slope;
            // Near the optimum the objective is flat to rounding; accept
            // steps that still shrink the gradient.
            let flat = f_new <= fx + 1e-14 * fx.abs().max(1.0) && inf_norm(&g_new) < inf_norm(&g);
            if f_new.is_finite() && (armijo || flat) {
                accepted = true;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                    if mem.len() == HISTORY {
                        mem.pop_front();
                    }
                    mem.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                if fx - f_new <= STALL_FTOL * fx.abs().max(1.0) {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                fx = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if mem.is_empty() {
                break;
            }
            mem.clear();
        }
    }
    let gn = inf_norm(&g);
    (x, iter, gn)
}

/// Fits a multinomial logistic regression minimizing
/// `mean cross-entropy + ‖W‖² / (2 C N)`; intercepts are unpenalized.
pub fn fit_logreg(train: &StateMatrix, c: f64, max_iter: usize) -> Result<LogisticRegression> {
    super::require_two_classes(train)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!("inverse regularization C must be positive, got {c}")));
    }
    // Solve on centered, unit-variance columns. With the penalty rescaled per
    // column this is the same problem in new coordinates, only better conditioned.
    let (k, d) = (train.n_actions(), train.n_features());
    let (mean, scale) = column_moments(train);
    let mut scaled = train.clone();
    for row in scaled.data.chunks_mut(d.max(1)) {
        for j in 0..d {
            row[j] = (row[j] - mean[j]) / scale[j];
        }
    }
    let mut obj = Objective::new(&scaled, c);
    obj.column_penalty = scale.iter().map(|s| 1.0 / (s * s)).collect();
    let (theta, iterations, grad_norm) = lbfgs(|t, g| obj.eval(t, g), vec![0.0; obj.n_params()], GRAD_TOL, max_iter);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("logistic regression produced non-finite weights".into()));
    }
    let mut weights = theta[..k * d].to_vec();
    let mut intercepts = theta[k * d..].to_vec();
    for c in 0..k {
        let w = &mut weights[c * d..(c + 1) * d];
        for j in 0..d {
            w[j] /= scale[j];
            intercepts[c] -= w[j] * mean[j];
        }
    }
    Ok(LogisticRegression { weights, intercepts, n_features: d, iterations, grad_norm })
}
