//! Feedforward networks: ReLU hidden layers, softmax output, cross-entropy
//! loss, trained with Adam on shuffled mini-batches and early stopping on
//! validation loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staterep::StateMatrix;
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// `n_out × n_in`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpOptions {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

/// What happened during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrace {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter: training stops once more than `patience` consecutive
/// epochs pass without a new best validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best > self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_in: usize, hidden: &[usize], n_out: usize, seed: u64) -> Self {
        let mut rng = util::rng(seed);
        let mut dims = vec![n_in];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        let layers = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    n_in: w[0],
                    n_out: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer as `weights ++ bias`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut o = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[o..o + nw]);
            o += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[o..o + nb]);
            o += nb;
        }
    }

    /// Activations of every layer; the last entry holds softmax probabilities.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (li, l) in self.layers.iter().enumerate() {
            let input = acts.last().expect("input");
            let mut out: Vec<f64> = (0..l.n_out)
                .map(|o| l.bias[o] + l.weights[o * l.n_in..(o + 1) * l.n_in].iter().zip(input).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            if li + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                util::softmax_in_place(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().expect("output layer")
    }

    /// Mean cross-entropy over `rows` and its gradient in flat layout.
    pub fn loss_and_grad(&self, data: &StateMatrix, rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect();
        let mut loss = 0.0;
        for &r in rows {
            let acts = self.forward(data.row(r));
            let y = data.labels[r];
            let probs = acts.last().expect("output");
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();
            // dL/dz at the output: p - e_y
            let mut delta: Vec<f64> = probs.clone();
            delta[y] -= 1.0;
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..l.n_out {
                    gb[o] += delta[o];
                    let row = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += delta[o] * v;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; l.n_in];
                    for o in 0..l.n_out {
                        let w = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                        for (p, wi) in prev.iter_mut().zip(w) {
                            *p += delta[o] * wi;
                        }
                    }
                    // ReLU derivative
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let scale = 1.0 / rows.len() as f64;
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw.into_iter().map(|v| v * scale));
            flat.extend(gb.into_iter().map(|v| v * scale));
        }
        (loss * scale, flat)
    }

    pub fn mean_loss(&self, data: &StateMatrix) -> f64 {
        let total: f64 = data
            .rows()
            .zip(&data.labels)
            .map(|(x, &y)| -self.predict_proba(x)[y].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / data.n_rows() as f64
    }
}

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Trains an MLP and returns the snapshot with the best validation loss.
/// With an empty validation set the training loss is monitored instead.
pub fn fit_mlp(train: &StateMatrix, val: &StateMatrix, opts: &MlpOptions) -> Result<(Mlp, MlpTrace)> {
    super::require_two_classes(train)?;
    if opts.batch_size == 0 || opts.max_epochs == 0 || !(opts.learning_rate > 0.0) {
        return Err(Error::Config("MLP needs positive batch size, epochs and learning rate".into()));
    }
    let mut net = Mlp::init(train.n_features(), &opts.hidden, train.n_actions(), opts.seed);
    let mut params = net.flat_params();
    let mut adam = Adam::new(params.len(), opts.learning_rate);
    let mut rng = util::rng(util::derive_seed(opts.seed, 1));
    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let monitor = if val.n_rows() > 0 { val } else { train };

    let mut stopper = EarlyStopping::new(opts.patience);
    let mut best = net.clone();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=opts.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            let (loss, grad) = net.loss_and_grad(train, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
            }
            adam.step(&mut params, &grad);
            net.set_flat_params(&params);
        }
        let vl = net.mean_loss(monitor);
        if !vl.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss at epoch {epoch}")));
        }
        val_losses.push(vl);
        match stopper.update(epoch, vl) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let trace = MlpTrace { epochs_run, best_epoch: stopper.best_epoch, best_val_loss: stopper.best, val_losses };
    Ok((best, trace))
}
