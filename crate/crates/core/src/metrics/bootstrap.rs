use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// A point estimate with a percentile-bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
    /// Resamples on which the statistic was defined.
    pub n_valid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Fraction of undefined resamples above which the interval is flagged.
const MAX_UNDEFINED_FRACTION: f64 = 0.2;

/// Percentile bootstrap over units (patients): each replicate draws
/// `units.len()` units with replacement using a generator seeded from
/// `(seed, replicate)`. Replicates where `statistic` returns `None` are
/// skipped. The interval is widened to contain the point estimate if needed.
pub fn bootstrap_ci<T, F>(units: &[T], statistic: F, n_boot: usize, level: f64, seed: u64) -> Result<MetricEstimate>
where
    T: Sync,
    F: Fn(&[&T]) -> Option<f64> + Sync,
{
    if units.len() < 2 {
        return Err(Error::Config("bootstrap needs at least two units".into()));
    }
    if !(level > 0.0 && level < 1.0) || n_boot == 0 {
        return Err(Error::Config(format!("invalid bootstrap settings: B={n_boot}, level={level}")));
    }
    let all: Vec<&T> = units.iter().collect();
    let value = statistic(&all).ok_or_else(|| Error::UndefinedMetric("statistic undefined on the full sample".into()))?;

    let replicate = |r: usize| -> Option<f64> {
        use rand::Rng;
        let mut rng = util::rng(util::derive_seed(seed, r as u64));
        let draw: Vec<&T> = (0..units.len()).map(|_| &units[rng.random_range(0..units.len())]).collect();
        statistic(&draw).filter(|v| v.is_finite())
    };
    #[cfg(feature = "parallel")]
    let stats: Vec<Option<f64>> = {
        use rayon::prelude::*;
        (0..n_boot).into_par_iter().map(replicate).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<Option<f64>> = (0..n_boot).map(replicate).collect();

    let mut valid: Vec<f64> = stats.into_iter().flatten().collect();
    let undefined = n_boot - valid.len();
    let mut warning = None;
    if undefined as f64 > MAX_UNDEFINED_FRACTION * n_boot as f64 {
        warning = Some(format!("statistic undefined on {undefined} of {n_boot} resamples; interval may be too wide"));
    }
    if valid.is_empty() {
        return Ok(MetricEstimate { value, ci_low: value, ci_high: value, n_bootstrap: n_boot, n_valid: 0, warning });
    }
    valid.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = util::quantile_sorted(&valid, alpha);
    let hi = util::quantile_sorted(&valid, 1.0 - alpha);
    Ok(MetricEstimate {
        value,
        ci_low: lo.min(value),
        ci_high: hi.max(value),
        n_bootstrap: n_boot,
        n_valid: valid.len(),
        warning,
    })
}
