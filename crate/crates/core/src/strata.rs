//! Stratified evaluation: severity-trajectory subgroups, per-stage metrics,
//! switch states and the tree-complexity sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeSet;
use crate::error::Result;
use crate::metrics::Metric;
use crate::models::{fit_model, sample_hyperparams, HyperparamSpace, ModelKind, PolicyModel};
use crate::staterep::StateMatrix;
use crate::util::derive_seed;

pub const N_GROUPS: usize = 6;

/// Mean rate of change of severity, `(s_T - s_1) / (T - 1)`.
pub fn severity_slope(series: &[Option<f64>]) -> Option<f64> {
    if series.len() < 2 || series.iter().any(Option::is_none) {
        return None;
    }
    let first = series[0]?;
    let last = series[series.len() - 1]?;
    Some((last - first) / (series.len() - 1) as f64)
}

/// Group 1..=6 for a slope. Interval edges are closed on the left, so -0.4
/// lands in group 2 and 0.4 in group 6.
pub fn group_for_slope(x: f64) -> usize {
    const EDGES: [f64; 5] = [-0.4, -0.15, 0.0, 0.15, 0.4];
    1 + EDGES.iter().filter(|&&e| x >= e).count()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAssignment {
    pub groups: BTreeMap<String, usize>,
    /// Patients left out (a single stage or missing severity).
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

impl SubgroupAssignment {
    pub fn from_series<'a, I>(patients: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, Vec<Option<f64>>)>,
    {
        let mut out = Self::default();
        for (id, series) in patients {
            match severity_slope(&series) {
                Some(x) => {
                    out.groups.insert(id.to_string(), group_for_slope(x));
                }
                None => {
                    let why = if series.len() < 2 { "a single stage" } else { "missing severity" };
                    out.warnings.push(format!("patient '{id}' excluded from subgroups: {why}"));
                    out.excluded.push(id.to_string());
                }
            }
        }
        if !out.warnings.is_empty() {
            log::warn!("{} patients excluded from severity subgroups", out.excluded.len());
        }
        out
    }

    /// Uses the severity tags carried by the matrix rows.
    pub fn from_matrix(m: &StateMatrix) -> Self {
        let by_patient = m.rows_by_patient();
        Self::from_series(
            by_patient
                .iter()
                .enumerate()
                .filter(|(_, rows)| !rows.is_empty())
                .map(|(p, rows)| (m.patient_ids[p].as_str(), rows.iter().map(|&r| m.severity[r]).collect())),
        )
    }

    pub fn group_of(&self, patient_id: &str) -> Option<usize> {
        self.groups.get(patient_id).copied()
    }

    /// Patient counts for groups 1..=6.
    pub fn sizes(&self) -> [usize; N_GROUPS] {
        let mut n = [0; N_GROUPS];
        self.groups.values().for_each(|&g| n[g - 1] += 1);
        n
    }
}

pub fn assign_severity_groups(episodes: &EpisodeSet) -> SubgroupAssignment {
    SubgroupAssignment::from_series(
        episodes
            .episodes
            .iter()
            .map(|e| (e.patient_id.as_str(), e.stages.iter().map(|s| s.severity).collect())),
    )
}

/// Rows of `m` belonging to each group 1..=6 (index 0 is group 1).
pub fn rows_by_group(m: &StateMatrix, groups: &SubgroupAssignment) -> [Vec<usize>; N_GROUPS] {
    let mut out: [Vec<usize>; N_GROUPS] = Default::default();
    for (i, &p) in m.patient.iter().enumerate() {
        if let Some(g) = groups.group_of(&m.patient_ids[p]) {
            out[g - 1].push(i);
        }
    }
    out
}

/// A metric evaluated on row subsets; `None` where it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSeries {
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// Metric on the rows sharing each key `0..n_keys`; rows keyed `None` are ignored.
pub fn series_by_key(keys: &[Option<usize>], n_keys: usize, probs: &[Vec<f64>], labels: &[usize], metric: Metric) -> StratumSeries {
    let mut rows = vec![Vec::new(); n_keys];
    for (i, k) in keys.iter().enumerate() {
        if let Some(k) = *k {
            if k < n_keys {
                rows[k].push(i);
            }
        }
    }
    let values = rows
        .iter()
        .map(|r| {
            if r.is_empty() {
                return None;
            }
            let p: Vec<Vec<f64>> = r.iter().map(|&i| probs[i].clone()).collect();
            let y: Vec<usize> = r.iter().map(|&i| labels[i]).collect();
            metric.compute(&p, &y).ok()
        })
        .collect();
    StratumSeries { values, counts: rows.iter().map(Vec::len).collect() }
}

/// Metric per stage `t = 1..=max_stage` from precomputed row probabilities.
pub fn series_by_stage(m: &StateMatrix, probs: &[Vec<f64>], metric: Metric, max_stage: usize) -> StratumSeries {
    let keys: Vec<Option<usize>> = m.stage.iter().map(|&t| t.checked_sub(1)).collect();
    series_by_key(&keys, max_stage, probs, &m.labels, metric)
}

pub fn metric_by_stage(m: &StateMatrix, model: &PolicyModel, metric: Metric, max_stage: usize) -> Result<StratumSeries> {
    let probs = model.predict_matrix(m)?;
    Ok(series_by_stage(m, &probs, metric, max_stage))
}

pub fn series_by_group(m: &StateMatrix, probs: &[Vec<f64>], metric: Metric, groups: &SubgroupAssignment) -> StratumSeries {
    let keys: Vec<Option<usize>> = m.patient.iter().map(|&p| groups.group_of(&m.patient_ids[p]).map(|g| g - 1)).collect();
    series_by_key(&keys, N_GROUPS, probs, &m.labels, metric)
}

/// Row indices where the action differs from the previous one. At `t = 1`
/// the previous action is the default action.
pub fn switch_rows(m: &StateMatrix) -> Vec<usize> {
    (0..m.n_rows()).filter(|&i| m.labels[i] != m.prev_action[i]).collect()
}

pub fn filter_switch_states(m: &StateMatrix) -> StateMatrix {
    m.select_rows(&switch_rows(m))
}

/// Train/validation/test matrices for one state representation.
#[derive(Debug, Clone)]
pub struct SplitMatrices {
    pub label: String,
    pub train: StateMatrix,
    pub val: StateMatrix,
    pub test: StateMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub n_models: usize,
    pub bucket_width: usize,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { n_models: 500, bucket_width: 5, seed: 0 }
    }
}

/// Best model of one leaf-count bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub state: String,
    pub bucket: usize,
    pub leaves_min: usize,
    pub leaves_max: usize,
    pub n_models: usize,
    pub best_leaves: usize,
    pub val_auroc: Option<f64>,
    pub test_auroc: Option<f64>,
    /// Test AUROC restricted to switch states.
    pub test_auroc_switch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<ComplexityPoint>,
    /// Leaf count of every fitted tree, per state, in draw order.
    pub leaf_counts: BTreeMap<String, Vec<usize>>,
    pub failures: usize,
}

struct Fitted {
    leaves: usize,
    val_auroc: Option<f64>,
    model: PolicyModel,
}

/// Fits `n_models` random trees per state, buckets them by leaf count and
/// reports, per bucket, the validation-best tree's test AUROC on all rows and
/// on switch states.
pub fn tree_complexity_sweep(sets: &[SplitMatrices], space: &HyperparamSpace, opts: SweepOptions) -> SweepResult {
    let width = opts.bucket_width.max(1);
    let mut points = Vec::new();
    let mut leaf_counts = BTreeMap::new();
    let mut failures = 0;
    for (s, set) in sets.iter().enumerate() {
        let configs = sample_hyperparams(space, ModelKind::Dt, derive_seed(opts.seed, s as u64), opts.n_models);
        let fit_one = |c: &crate::models::ModelConfig| -> Option<Fitted> {
            let model = fit_model(c, &set.train, &set.val, 0).ok()?;
            let leaves = match &model.params {
                crate::models::ModelParams::Dt(t) => t.n_leaves(),
                _ => unreachable!("sweep fits trees only"),
            };
            let val_auroc = model.predict_matrix(&set.val).ok().and_then(|p| Metric::Auroc.compute(&p, &set.val.labels).ok());
            Some(Fitted { leaves, val_auroc, model })
        };
        #[cfg(feature = "parallel")]
        let fitted: Vec<Option<Fitted>> = {
            use rayon::prelude::*;
            configs.par_iter().map(fit_one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let fitted: Vec<Option<Fitted>> = configs.iter().map(fit_one).collect();

        failures += fitted.iter().filter(|f| f.is_none()).count();
        let fitted: Vec<Fitted> = fitted.into_iter().flatten().collect();
        leaf_counts.insert(set.label.clone(), fitted.iter().map(|f| f.leaves).collect());

        let switch = filter_switch_states(&set.test);
        let mut buckets: BTreeMap<usize, Vec<&Fitted>> = BTreeMap::new();
        for f in &fitted {
            buckets.entry((f.leaves - 1) / width).or_default().push(f);
        }
        for (bucket, members) in buckets {
            // first strictly better validation score wins; undefined scores rank last
            let mut best = members[0];
            for &f in &members[1..] {
                if f.val_auroc.unwrap_or(f64::NEG_INFINITY) > best.val_auroc.unwrap_or(f64::NEG_INFINITY) {
                    best = f;
                }
            }
            let auroc_on = |m: &StateMatrix| best.model.predict_matrix(m).ok().and_then(|p| Metric::Auroc.compute(&p, &m.labels).ok());
            points.push(ComplexityPoint {
                state: set.label.clone(),
                bucket,
                leaves_min: bucket * width + 1,
                leaves_max: (bucket + 1) * width,
                n_models: members.len(),
                best_leaves: best.leaves,
                val_auroc: best.val_auroc,
                test_auroc: auroc_on(&set.test),
                test_auroc_switch: auroc_on(&switch),
            });
        }
    }
    SweepResult { points, leaf_counts, failures }
}
