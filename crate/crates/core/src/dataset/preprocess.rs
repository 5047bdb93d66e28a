use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CohortSchema, EpisodeSet, Imputation, Transform, Value, VariableKind};
use crate::error::{Error, Result};
use crate::util;

/// Offset added before taking logs so nonpositive values stay finite.
pub const LOG_EPSILON: f64 = 1e-6;

/// Reserved one-hot bucket for category tokens not seen during fitting.
pub const OTHER_TOKEN: &str = "other";

const QUINTILES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariableStats {
    Identity { fill: f64 },
    Standardize { fill: f64, mean: f64, std: f64 },
    LogStandardize { fill: f64, mean: f64, std: f64 },
    Quintiles { fill: f64, cuts: [f64; 4] },
    OneHot { fill: String, vocabulary: Vec<String> },
}

/// Fitted per-variable statistics. Built only from training episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub schema: CohortSchema,
    pub stats: Vec<VariableStats>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// One column of the encoded (numeric) context vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub source: usize,
    pub aggregate_eligible: bool,
    pub lag_eligible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericEpisode {
    pub patient_id: String,
    /// Encoded context per stage, each of length `columns.len()`.
    pub contexts: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub severity: Vec<Option<f64>>,
}

impl NumericEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Episodes after imputation and encoding; self-describing so state
/// construction does not need the schema.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericEpisodeSet {
    pub columns: Vec<EncodedColumn>,
    pub action_labels: Vec<String>,
    pub default_action: usize,
    pub episodes: Vec<NumericEpisode>,
}

impl NumericEpisodeSet {
    pub fn n_actions(&self) -> usize {
        self.action_labels.len()
    }

    pub fn n_rows(&self) -> usize {
        self.episodes.iter().map(NumericEpisode::len).sum()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            action_labels: self.action_labels.clone(),
            default_action: self.default_action,
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }
}

fn log_value(x: f64) -> f64 {
    (x.max(0.0) + LOG_EPSILON).ln()
}

/// Last observation carried forward, then `fill` for leading gaps.
fn locf<T: Clone>(values: impl Iterator<Item = Option<T>>, fill: &T) -> Vec<T> {
    let mut last: Option<T> = None;
    values
        .map(|v| {
            if let Some(x) = v {
                last = Some(x);
            }
            last.clone().unwrap_or_else(|| fill.clone())
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = util::mean(values);
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64;
    (m, var.sqrt())
}

/// Fits imputation fills and transform statistics on the training episodes.
pub fn fit_preprocessor(train: &EpisodeSet, schema: &CohortSchema) -> Result<Preprocessor> {
    if train.is_empty() {
        return Err(Error::NoEpisodes);
    }
    schema.validate()?;
    let mut warnings = Vec::new();
    let mut stats = Vec::with_capacity(schema.variables.len());

    for (vi, var) in schema.variables.iter().enumerate() {
        fn column(ep: &super::Episode, vi: usize) -> impl Iterator<Item = Option<Value>> + '_ {
            ep.stages.iter().map(move |s| s.context[vi].clone())
        }
        match var.kind {
            VariableKind::Numeric => {
                let observed: Vec<f64> = train
                    .episodes
                    .iter()
                    .flat_map(|ep| column(ep, vi))
                    .flatten()
                    .filter_map(|v| v.as_num())
                    .collect();
                let fill = match var.imputation() {
                    Imputation::Constant(v) => v.as_num().unwrap_or(0.0),
                    _ if observed.is_empty() => {
                        warnings.push(format!("{}: no observed training values, imputing 0", var.name));
                        0.0
                    }
                    _ => util::mean(&observed),
                };
                let imputed: Vec<f64> = train
                    .episodes
                    .iter()
                    .flat_map(|ep| locf(column(ep, vi).map(|v| v.and_then(|x| x.as_num())), &fill))
                    .collect();
                let mut standardize = |values: &[f64]| {
                    let (mean, mut std) = mean_std(values);
                    if !(std > 1e-12) {
                        warnings.push(format!("{}: zero variance, standard deviation set to 1", var.name));
                        std = 1.0;
                    }
                    (mean, std)
                };
                stats.push(match var.transform() {
                    Transform::None => VariableStats::Identity { fill },
                    Transform::Standardize => {
                        let (mean, std) = standardize(&imputed);
                        VariableStats::Standardize { fill, mean, std }
                    }
                    Transform::LogStandardize => {
                        let logs: Vec<f64> = imputed.iter().map(|&x| log_value(x)).collect();
                        let (mean, std) = standardize(&logs);
                        VariableStats::LogStandardize { fill, mean, std }
                    }
                    Transform::DiscretizeQuintiles => {
                        let mut sorted = imputed.clone();
                        sorted.sort_by(f64::total_cmp);
                        let cuts = QUINTILES.map(|q| util::quantile_sorted(&sorted, q));
                        VariableStats::Quintiles { fill, cuts }
                    }
                });
            }
            VariableKind::Categorical => {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for v in train.episodes.iter().flat_map(|ep| column(ep, vi)).flatten() {
                    *counts.entry(v.token()).or_default() += 1;
                }
                let mode = counts
                    .iter()
                    .fold(None::<(&String, usize)>, |best, (tok, &n)| match best {
                        Some((_, bn)) if bn >= n => best,
                        _ => Some((tok, n)),
                    })
                    .map(|(t, _)| t.clone());
                let fill = match var.imputation() {
                    Imputation::Constant(v) => v.token(),
                    _ => mode.unwrap_or_else(|| {
                        warnings.push(format!("{}: no observed training values", var.name));
                        OTHER_TOKEN.to_string()
                    }),
                };
                let vocabulary: Vec<String> = counts.into_keys().filter(|t| t != OTHER_TOKEN).collect();
                stats.push(VariableStats::OneHot { fill, vocabulary });
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Preprocessor {
        schema: schema.clone(),
        stats,
        warnings,
    })
}

impl Preprocessor {
    /// Names and eligibility flags of the encoded columns, in output order.
    pub fn columns(&self) -> Vec<EncodedColumn> {
        let mut out = Vec::new();
        for (vi, (var, st)) in self.schema.variables.iter().zip(&self.stats).enumerate() {
            let mut push = |name: String| {
                out.push(EncodedColumn {
                    name,
                    source: vi,
                    aggregate_eligible: var.aggregate_eligible,
                    lag_eligible: var.lag_eligible,
                })
            };
            match st {
                VariableStats::Quintiles { .. } => {
                    for q in 1..=5 {
                        push(format!("{}=q{q}", var.name));
                    }
                }
                VariableStats::OneHot { vocabulary, .. } => {
                    for tok in vocabulary {
                        push(format!("{}={tok}", var.name));
                    }
                    push(format!("{}={OTHER_TOKEN}", var.name));
                }
                _ => push(var.name.clone()),
            }
        }
        out
    }

    fn encode_variable(&self, vi: usize, values: &[Option<Value>], out: &mut [Vec<f64>], offset: usize) {
        match &self.stats[vi] {
            VariableStats::OneHot { fill, vocabulary } => {
                let tokens = locf(values.iter().map(|v| v.as_ref().map(Value::token)), fill);
                for (row, tok) in out.iter_mut().zip(tokens) {
                    let slot = vocabulary.iter().position(|v| *v == tok).unwrap_or(vocabulary.len());
                    row[offset + slot] = 1.0;
                }
            }
            numeric => {
                let fill = match numeric {
                    VariableStats::Identity { fill }
                    | VariableStats::Standardize { fill, .. }
                    | VariableStats::LogStandardize { fill, .. }
                    | VariableStats::Quintiles { fill, .. } => *fill,
                    VariableStats::OneHot { .. } => unreachable!(),
                };
                let xs = locf(values.iter().map(|v| v.as_ref().and_then(Value::as_num)), &fill);
                for (row, x) in out.iter_mut().zip(xs) {
                    match numeric {
                        VariableStats::Identity { .. } => row[offset] = x,
                        VariableStats::Standardize { mean, std, .. } => row[offset] = (x - mean) / std,
                        VariableStats::LogStandardize { mean, std, .. } => {
                            row[offset] = (log_value(x) - mean) / std
                        }
                        VariableStats::Quintiles { cuts, .. } => {
                            let bin = cuts.iter().filter(|&&c| x > c).count();
                            row[offset + bin] = 1.0;
                        }
                        VariableStats::OneHot { .. } => unreachable!(),
                    }
                }
            }
        }
    }

    fn width(&self, vi: usize) -> usize {
        match &self.stats[vi] {
            VariableStats::Quintiles { .. } => 5,
            VariableStats::OneHot { vocabulary, .. } => vocabulary.len() + 1,
            _ => 1,
        }
    }

    fn apply_episode(&self, ep: &super::Episode) -> NumericEpisode {
        let width: usize = (0..self.stats.len()).map(|v| self.width(v)).sum();
        let mut contexts = vec![vec![0.0; width]; ep.stages.len()];
        let mut offset = 0;
        for vi in 0..self.stats.len() {
            let values: Vec<Option<Value>> = ep.stages.iter().map(|s| s.context[vi].clone()).collect();
            self.encode_variable(vi, &values, &mut contexts, offset);
            offset += self.width(vi);
        }
        NumericEpisode {
            patient_id: ep.patient_id.clone(),
            contexts,
            actions: ep.stages.iter().map(|s| s.action).collect(),
            severity: ep.stages.iter().map(|s| s.severity).collect(),
        }
    }

    /// Imputes (LOCF, then the fitted fill) and encodes every episode.
    pub fn apply(&self, episodes: &EpisodeSet) -> NumericEpisodeSet {
        #[cfg(feature = "parallel")]
        let encoded = {
            use rayon::prelude::*;
            episodes.episodes.par_iter().map(|ep| self.apply_episode(ep)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let encoded = episodes.episodes.iter().map(|ep| self.apply_episode(ep)).collect();
        NumericEpisodeSet {
            columns: self.columns(),
            action_labels: self.schema.action_labels.clone(),
            default_action: self.schema.default_action_index(),
            episodes: encoded,
        }
    }

    /// SHA-256 of the canonical JSON form; equal fingerprints mean equal fits.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("preprocessor serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Episode, Stage, VariableSpec};

    fn ep(id: &str, values: &[Option<Value>]) -> Episode {
        Episode {
            patient_id: id.into(),
            stages: values
                .iter()
                .map(|v| Stage {
                    context: vec![v.clone()],
                    action: 0,
                    severity: None,
                })
                .collect(),
        }
    }

    fn num(x: f64) -> Option<Value> {
        Some(Value::Num(x))
    }

    fn schema_with(var: VariableSpec) -> CohortSchema {
        CohortSchema::new(vec![var], vec!["a".into(), "b".into()], "a").unwrap()
    }

    #[test]
    fn quintile_cuts_use_linear_interpolation() {
        let values: Vec<_> = (1..=10).map(|x| num(x as f64)).collect();
        let schema = schema_with(VariableSpec::numeric("x").with_transform(Transform::DiscretizeQuintiles));
        let prep = fit_preprocessor(&EpisodeSet::new(vec![ep("p", &values)]), &schema).unwrap();
        // sorted 1..10, percentile q sits at rank 9q: 1.8, 3.6, 5.4, 7.2
        let expected = [2.8, 4.6, 6.4, 8.2];
        match &prep.stats[0] {
            VariableStats::Quintiles { cuts, .. } => {
                for (c, e) in cuts.iter().zip(expected) {
                    assert!((c - e).abs() < 1e-12, "{cuts:?}");
                }
            }
            other => panic!("{other:?}"),
        }
        let out = prep.apply(&EpisodeSet::new(vec![ep("p", &values)]));
        let per_bin: Vec<f64> = (0..5).map(|b| out.episodes[0].contexts.iter().map(|r| r[b]).sum()).collect();
        assert_eq!(per_bin, vec![2.0; 5]);
    }

    #[test]
    fn constant_variable_gets_unit_std_and_a_warning() {
        let schema = schema_with(VariableSpec::numeric("x"));
        let prep = fit_preprocessor(&EpisodeSet::new(vec![ep("p", &[num(5.0), num(5.0)])]), &schema).unwrap();
        assert_eq!(prep.stats[0], VariableStats::Standardize { fill: 5.0, mean: 5.0, std: 1.0 });
        assert_eq!(prep.warnings.len(), 1);
    }

    #[test]
    fn categorical_vocabulary_reserves_other() {
        let schema = schema_with(VariableSpec::categorical("c"));
        let train = EpisodeSet::new(vec![ep("p", &[Some(Value::Cat("b".into())), Some(Value::Cat("a".into()))])]);
        let prep = fit_preprocessor(&train, &schema).unwrap();
        let names: Vec<_> = prep.columns().into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["c=a", "c=b", "c=other"]);
        let out = prep.apply(&EpisodeSet::new(vec![ep("q", &[Some(Value::Cat("c".into()))])]));
        assert_eq!(out.episodes[0].contexts[0], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn locf_then_training_mean() {
        let schema = schema_with(VariableSpec::numeric("x").with_transform(Transform::None));
        let train = EpisodeSet::new(vec![ep("t", &[num(1.0), num(3.0)])]);
        let prep = fit_preprocessor(&train, &schema).unwrap();
        let test = EpisodeSet::new(vec![ep("p", &[None, num(3.0), None, num(5.0)])]);
        let out = prep.apply(&test);
        let xs: Vec<f64> = out.episodes[0].contexts.iter().map(|r| r[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 3.0, 5.0]);
    }

    #[test]
    fn standardize_uses_fitted_stats() {
        let prep = Preprocessor {
            schema: schema_with(VariableSpec::numeric("x")),
            stats: vec![VariableStats::Standardize { fill: 5.0, mean: 5.0, std: 2.0 }],
            warnings: vec![],
        };
        let out = prep.apply(&EpisodeSet::new(vec![ep("p", &[num(7.0)])]));
        assert_eq!(out.episodes[0].contexts[0][0], 1.0);
    }

    #[test]
    fn log_transform_clamps_nonpositive_values() {
        let schema = schema_with(VariableSpec::numeric("x").with_transform(Transform::LogStandardize));
        let train = EpisodeSet::new(vec![ep("p", &[num(-3.0), num(0.0), num(1.0), num(100.0)])]);
        let prep = fit_preprocessor(&train, &schema).unwrap();
        let out = prep.apply(&train);
        assert!(out.episodes[0].contexts.iter().all(|r| r[0].is_finite()));
        // -3 and 0 both clamp to ln(eps)
        assert_eq!(out.episodes[0].contexts[0][0], out.episodes[0].contexts[1][0]);
    }

    #[test]
    fn constant_imputation_fills_leading_gaps() {
        let schema = schema_with(VariableSpec::numeric("x").with_transform(Transform::None).with_imputation(Imputation::Constant(Value::Num(-1.0))));
        let train = EpisodeSet::new(vec![ep("p", &[None, num(4.0)])]);
        let prep = fit_preprocessor(&train, &schema).unwrap();
        let xs: Vec<f64> = prep.apply(&train).episodes[0].contexts.iter().map(|r| r[0]).collect();
        assert_eq!(xs, vec![-1.0, 4.0]);
    }

    #[test]
    fn categorical_mode_fills_leading_gaps() {
        let schema = schema_with(VariableSpec::categorical("c"));
        let cat = |s: &str| Some(Value::Cat(s.into()));
        let train = EpisodeSet::new(vec![ep("p", &[None, cat("b"), cat("b"), cat("a")])]);
        let prep = fit_preprocessor(&train, &schema).unwrap();
        let out = prep.apply(&train);
        assert_eq!(out.episodes[0].contexts[0], vec![0.0, 1.0, 0.0]);
    }
}
