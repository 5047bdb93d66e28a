//! Discrimination and calibration metrics, confusion matrices and
//! patient-level bootstrap intervals.

mod bootstrap;

pub use bootstrap::{bootstrap_ci, MetricEstimate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const DEFAULT_BINS: usize = 10;

/// A named metric over predicted probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Accuracy,
    Ece,
    Sce,
    LogLoss,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::Accuracy => "accuracy",
            Metric::Ece => "ece",
            Metric::Sce => "sce",
            Metric::LogLoss => "log_loss",
        }
    }

    /// Errors when the metric is undefined on these rows (e.g. AUROC with one class).
    pub fn compute(self, probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::UndefinedMetric(format!("{} of an empty set", self.as_str())));
        }
        match self {
            Metric::Auroc => auroc_multiclass(probs, labels),
            Metric::Accuracy => accuracy(probs, labels),
            Metric::Ece => Ok(expected_calibration_error(probs, labels, DEFAULT_BINS)),
            Metric::Sce => Ok(static_calibration_error(probs, labels, DEFAULT_BINS)),
            Metric::LogLoss => Ok(log_loss(probs, labels)),
        }
    }
}

/// Binary AUROC via the Mann-Whitney rank statistic; tied scores count ½.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += avg_rank * pos_in_tie as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over classes present in the labels.
    #[default]
    Macro,
    /// Mean weighted by class prevalence.
    Weighted,
}

/// One-vs-rest AUROC averaged over the classes present in `labels`.
pub fn auroc_multiclass(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    auroc_multiclass_with(probs, labels, Averaging::Macro)
}

pub fn auroc_multiclass_with(probs: &[Vec<f64>], labels: &[usize], averaging: Averaging) -> Result<f64> {
    assert_eq!(probs.len(), labels.len());
    let k = probs.first().map_or(0, Vec::len);
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric("AUROC needs at least two classes".into()));
    }
    if k == 2 {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let y: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return auroc_binary(&scores, &y);
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    let mut scores = vec![0.0; probs.len()];
    let mut y = vec![false; probs.len()];
    for &c in &present {
        for (i, (p, &l)) in probs.iter().zip(labels).enumerate() {
            scores[i] = p[c];
            y[i] = l == c;
        }
        let w = match averaging {
            Averaging::Macro => 1.0,
            Averaging::Weighted => counts[c] as f64,
        };
        total += w * auroc_binary(&scores, &y)?;
        weight += w;
    }
    Ok(total / weight)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = probs.iter().zip(labels).filter(|(p, &y)| util::argmax(p) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean negative log-likelihood of the labels, probabilities floored at 1e-15.
pub fn log_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    probs.iter().zip(labels).map(|(p, &y)| -p[y].max(1e-15).ln()).sum::<f64>() / labels.len() as f64
}

/// Equal-width bin over (0, 1] with half-open `(b/B, (b+1)/B]` bins; 0 goes to the first bin.
pub fn bin_index(p: f64, bins: usize) -> usize {
    if p <= 0.0 {
        return 0;
    }
    let nb = bins as f64;
    let mut b = ((p * nb).ceil() as usize).clamp(1, bins) - 1;
    // the product can round across an edge; settle against the edges themselves
    if b > 0 && p <= b as f64 / nb {
        b -= 1;
    } else if b + 1 < bins && p > (b + 1) as f64 / nb {
        b += 1;
    }
    b
}

/// Expected calibration error of the top-label confidence.
pub fn expected_calibration_error(probs: &[Vec<f64>], labels: &[usize], bins: usize) -> f64 {
    let n = labels.len();
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    for (p, &y) in probs.iter().zip(labels) {
        let pred = util::argmax(p);
        let b = bin_index(p[pred], bins);
        count[b] += 1;
        conf[b] += p[pred];
        if pred == y {
            hits[b] += 1.0;
        }
    }
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n as f64) * (hits[b] / nb - conf[b] / nb).abs()
        })
        .sum()
}

/// Static calibration error: per-class binned calibration gaps, averaged over classes.
pub fn static_calibration_error(probs: &[Vec<f64>], labels: &[usize], bins: usize) -> f64 {
    let n = labels.len();
    let k = probs.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for c in 0..k {
        let mut count = vec![0usize; bins];
        let mut conf = vec![0.0; bins];
        let mut hits = vec![0.0; bins];
        for (p, &y) in probs.iter().zip(labels) {
            let b = bin_index(p[c], bins);
            count[b] += 1;
            conf[b] += p[c];
            if y == c {
                hits[b] += 1.0;
            }
        }
        total += (0..bins)
            .filter(|&b| count[b] > 0)
            .map(|b| {
                let nb = count[b] as f64;
                (nb / n as f64) * (hits[b] / nb - conf[b] / nb).abs()
            })
            .sum::<f64>();
    }
    total / k as f64
}

/// `K×K` counts: entry `(i, j)` is the number of rows where the reference
/// predicts `i` and the comparison predicts `j`.
pub fn confusion_matrix(reference: &[usize], comparison: &[usize], k: usize) -> Vec<Vec<usize>> {
    assert_eq!(reference.len(), comparison.len());
    let mut m = vec![vec![0; k]; k];
    for (&i, &j) in reference.iter().zip(comparison) {
        m[i][j] += 1;
    }
    m
}

#[cfg(test)]
mod tests;
