//! The experimental protocol: repeated patient-level splits, random
//! hyperparameter search per (state, model), test evaluation with pooled
//! patient bootstrap intervals, stratified tables and OPE curves.

mod config;
mod report;

pub use config::{CellRef, ConfusionConfig, DataSource, ExperimentConfig, SweepConfig};
pub use report::{load_report, render_report, summary_table};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    fit_preprocessor, load_episodes, split_indices, CohortSchema, EpisodeSet, NumericEpisodeSet, Preprocessor,
    SplitIndices,
};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_ci, confusion_matrix, Metric, MetricEstimate};
use crate::models::{fit_model, sample_hyperparams, HyperparamSpace, ModelConfig, ModelKind, PolicyModel};
use crate::ope::{median_product_curve, products_from_probs, ProductCurve, ProductSeries};
use crate::staterep::{assemble_state, StateMatrix, StateSpec};
use crate::strata::{
    assign_severity_groups, series_by_key, tree_complexity_sweep, SplitMatrices, StratumSeries, SubgroupAssignment,
    SweepOptions, SweepResult, N_GROUPS,
};
use crate::synthgen::{bayes_auroc, generate_cohort};
use crate::util::{argmax, derive_seed};

const STREAM_SPLIT: u64 = 1 << 32;
const STREAM_CELL: u64 = 2 << 32;
const STREAM_BOOT: u64 = 3 << 32;
const STREAM_SWEEP: u64 = 4 << 32;

/// Metrics reported per cell, in output order.
pub const REPORTED_METRICS: [(&str, Metric, bool); 5] = [
    ("auroc", Metric::Auroc, false),
    ("accuracy", Metric::Accuracy, false),
    ("auroc_switch", Metric::Auroc, true),
    ("ece", Metric::Ece, false),
    ("sce", Metric::Sce, false),
];

/// Loaded episodes with their schema (and the generator oracle, if synthetic).
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub schema: CohortSchema,
    pub episodes: EpisodeSet,
    pub bayes_auroc: Option<f64>,
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Generator(g) => {
            let c = generate_cohort(g)?;
            let bayes = bayes_auroc(&c.oracle, &c.episodes).ok();
            Ok(LoadedData { schema: c.schema, episodes: c.episodes, bayes_auroc: bayes })
        }
        DataSource::File { episodes, schema } => {
            let schema = CohortSchema::from_json_file(schema)?;
            let episodes = load_episodes(episodes, &schema)?;
            Ok(LoadedData { schema, episodes, bayes_auroc: None })
        }
    }
}

/// One split after preprocessing: the fitted preprocessor sees training patients only.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub seed: u64,
    pub indices: SplitIndices,
    pub preprocessor: Preprocessor,
    pub train: NumericEpisodeSet,
    pub val: NumericEpisodeSet,
    pub test: NumericEpisodeSet,
}

impl PreparedSplit {
    pub fn matrices(&self, spec: &StateSpec) -> Result<SplitMatrices> {
        Ok(SplitMatrices {
            label: spec.label(),
            train: assemble_state(&self.train, spec)?.with_fold(crate::dataset::Fold::Train),
            val: assemble_state(&self.val, spec)?.with_fold(crate::dataset::Fold::Val),
            test: assemble_state(&self.test, spec)?.with_fold(crate::dataset::Fold::Test),
        })
    }
}

pub fn prepare_split(
    episodes: &EpisodeSet,
    schema: &CohortSchema,
    seed: u64,
    test_frac: f64,
    val_frac: f64,
) -> Result<PreparedSplit> {
    let indices = split_indices(episodes.len(), seed, test_frac, val_frac)?;
    let train = episodes.subset(&indices.train);
    let preprocessor = fit_preprocessor(&train, schema)?;
    Ok(PreparedSplit {
        seed,
        train: preprocessor.apply(&train),
        val: preprocessor.apply(&episodes.subset(&indices.val)),
        test: preprocessor.apply(&episodes.subset(&indices.test)),
        indices,
        preprocessor,
    })
}

pub fn split_seed(base: u64, split: usize) -> u64 {
    derive_seed(base, STREAM_SPLIT + split as u64)
}

/// Index of the candidate with the best validation score; ties and undefined
/// scores favor the lower index.
pub fn select_best_candidate(candidates: &[PolicyModel], val: &StateMatrix, metric: Metric) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Fit("no candidates to select from".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let score = c.predict_matrix(val).ok().and_then(|p| metric.compute(&p, &val.labels).ok()).unwrap_or(f64::NEG_INFINITY);
        let score = if metric == Metric::LogLoss || metric == Metric::Ece || metric == Metric::Sce { -score } else { score };
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

/// A fitted model with everything needed to score raw episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model: PolicyModel,
    pub preprocessor: Preprocessor,
    pub spec: StateSpec,
}

/// Test predictions of one patient in one split.
#[derive(Debug, Clone)]
struct PatientPreds {
    patient_id: String,
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    stages: Vec<usize>,
    switch: Vec<bool>,
}

fn pooled_metric(units: &[&PatientPreds], metric: Metric, switch_only: bool) -> Option<f64> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for u in units {
        for i in 0..u.labels.len() {
            if !switch_only || u.switch[i] {
                probs.push(u.probs[i].clone());
                labels.push(u.labels[i]);
            }
        }
    }
    metric.compute(&probs, &labels).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub estimate: Option<MetricEstimate>,
    pub split_values: Vec<Option<f64>>,
    pub split_mean: Option<f64>,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub state: String,
    pub spec: StateSpec,
    pub model: ModelKind,
    pub skip: Option<String>,
    pub metrics: Vec<MetricRow>,
    /// Selected configuration per split (`None` where every candidate failed).
    pub selected: Vec<Option<ModelConfig>>,
    pub candidate_failures: Vec<String>,
    pub by_stage_auroc: Option<StratumSeries>,
    pub by_stage_accuracy: Option<StratumSeries>,
    pub by_group_auroc: Option<StratumSeries>,
    pub ope: Option<ProductCurve>,
}

impl CellReport {
    fn skipped(spec: StateSpec, model: ModelKind, reason: String) -> Self {
        Self {
            state: spec.label(),
            spec,
            model,
            skip: Some(reason),
            metrics: Vec::new(),
            selected: Vec::new(),
            candidate_failures: Vec::new(),
            by_stage_auroc: None,
            by_stage_accuracy: None,
            by_group_auroc: None,
            ope: None,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub reference: String,
    pub comparison: String,
    pub labels: Vec<String>,
    /// Rows: reference prediction; columns: comparison prediction; over test switch states.
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub seed: u64,
    pub split_seeds: Vec<u64>,
    pub preprocessor_fingerprints: Vec<String>,
    pub n_patients: usize,
    pub n_rows: usize,
    pub action_labels: Vec<String>,
    pub fits_attempted: usize,
    pub fits_failed: usize,
    pub bayes_auroc: Option<f64>,
    pub duration_secs: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub groups: Option<[usize; N_GROUPS]>,
    pub confusion: Option<ConfusionReport>,
    pub complexity: Option<SweepResult>,
    pub meta: RunMeta,
    /// Selected models of the first split, for scoring new data.
    #[serde(skip)]
    pub bundles: Vec<(String, ModelBundle)>,
}

impl ExperimentReport {
    pub fn cell(&self, state: &str, model: ModelKind) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.state == state && c.model == model)
    }
}

struct CellWork {
    spec: StateSpec,
    model: ModelKind,
    skip: Option<String>,
    units: Vec<PatientPreds>,
    series: Vec<ProductSeries>,
    split_units: Vec<std::ops::Range<usize>>,
    selected: Vec<Option<ModelConfig>>,
    failures: Vec<String>,
}

fn unsupported_reason(kind: ModelKind, n_actions: usize) -> Option<String> {
    (kind == ModelKind::Rs && n_actions > 2).then(|| "unsupported: multiclass".to_string())
}

/// Fits the candidates of one cell in one split and returns the selected model.
fn fit_cell(
    configs: &[ModelConfig],
    mats: &SplitMatrices,
    metric: Metric,
    seed: u64,
) -> (Option<(usize, PolicyModel)>, Vec<String>) {
    let fit = |(i, c): (usize, &ModelConfig)| fit_model(c, &mats.train, &mats.val, derive_seed(seed, i as u64));
    #[cfg(feature = "parallel")]
    let results: Vec<Result<PolicyModel>> = {
        use rayon::prelude::*;
        configs.par_iter().enumerate().map(fit).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<PolicyModel>> = configs.iter().enumerate().map(fit).collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    let mut index = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(m) => {
                ok.push(m);
                index.push(i);
            }
            Err(e) => failures.push(format!("candidate {i}: {e}")),
        }
    }
    match select_best_candidate(&ok, &mats.val, metric) {
        Ok(b) => (Some((index[b], ok.swap_remove(b))), failures),
        Err(_) => (None, failures),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let data = load_data(&cfg.data)?;
    if data.episodes.is_empty() {
        return Err(Error::NoEpisodes);
    }
    data.episodes.validate(&data.schema)?;
    let n_actions = data.schema.n_actions();
    let specs = cfg.state_specs();
    let space = HyperparamSpace::for_profile(cfg.profile);
    let metric = cfg.metric().metric();
    let mut warnings = Vec::new();

    let mut cells: Vec<CellWork> = Vec::new();
    for spec in &specs {
        for &model in &cfg.models {
            cells.push(CellWork {
                spec: *spec,
                model,
                skip: unsupported_reason(model, n_actions),
                units: Vec::new(),
                series: Vec::new(),
                split_units: Vec::new(),
                selected: Vec::new(),
                failures: Vec::new(),
            });
        }
    }

    let mut split_seeds = Vec::new();
    let mut fingerprints = Vec::new();
    let mut fits_attempted = 0;
    let mut fits_failed = 0;
    let mut bundles = Vec::new();
    let mut sweep_split = None;
    for s in 0..cfg.n_splits {
        let seed = split_seed(cfg.seed, s);
        split_seeds.push(seed);
        let split = prepare_split(&data.episodes, &data.schema, seed, cfg.test_frac, cfg.val_frac)?;
        fingerprints.push(split.preprocessor.fingerprint());
        warnings.extend(split.preprocessor.warnings.iter().map(|w| format!("split {s}: {w}")));

        for (si, spec) in specs.iter().enumerate() {
            let mats = split.matrices(spec)?;
            for (mi, &kind) in cfg.models.iter().enumerate() {
                let ci = si * cfg.models.len() + mi;
                let cell = &mut cells[ci];
                if cell.skip.is_some() {
                    continue;
                }
                let cell_seed = derive_seed(seed, STREAM_CELL + ci as u64);
                let configs = sample_hyperparams(&space, kind, cell_seed, cfg.n_candidates);
                fits_attempted += configs.len();
                let (best, failures) = fit_cell(&configs, &mats, metric, cell_seed);
                fits_failed += failures.len();
                cell.failures.extend(failures.into_iter().map(|f| format!("split {s}: {f}")));
                let Some((pick, model)) = best else {
                    cell.selected.push(None);
                    cell.split_units.push(cell.units.len()..cell.units.len());
                    continue;
                };
                cell.selected.push(Some(configs[pick].clone()));
                let probs = model.predict_matrix(&mats.test)?;
                cell.series.extend(products_from_probs(&mats.test, &probs));
                let begin = cell.units.len();
                for rows in mats.test.rows_by_patient().into_iter().filter(|r| !r.is_empty()) {
                    let t = &mats.test;
                    cell.units.push(PatientPreds {
                        patient_id: t.patient_ids[t.patient[rows[0]]].clone(),
                        probs: rows.iter().map(|&r| probs[r].clone()).collect(),
                        labels: rows.iter().map(|&r| t.labels[r]).collect(),
                        stages: rows.iter().map(|&r| t.stage[r]).collect(),
                        switch: rows.iter().map(|&r| t.labels[r] != t.prev_action[r]).collect(),
                    });
                }
                cell.split_units.push(begin..cell.units.len());
                if s == 0 {
                    let name = format!("{}-{}", sanitize(&spec.label()), kind.as_str());
                    bundles.push((name, ModelBundle { model, preprocessor: split.preprocessor.clone(), spec: *spec }));
                }
            }
        }
        if s == 0 {
            sweep_split = Some(split);
        }
    }

    let groups = assign_severity_groups(&data.episodes);
    let has_groups = !groups.groups.is_empty();
    if !groups.excluded.is_empty() && has_groups {
        warnings.push(format!("{} patients excluded from severity subgroups", groups.excluded.len()));
    }

    let reports: Vec<CellReport> = cells
        .iter()
        .enumerate()
        .map(|(ci, c)| summarize_cell(cfg, ci, c, has_groups.then_some(&groups)))
        .collect::<Result<_>>()?;

    let confusion = build_confusion(cfg, &specs, &cells, &data.schema.action_labels);

    let complexity = match (&cfg.sweep, &sweep_split) {
        (Some(sw), Some(split)) => {
            let sweep_specs = sw.states.clone().unwrap_or_else(|| specs.clone());
            let sets = sweep_specs.iter().map(|s| split.matrices(s)).collect::<Result<Vec<_>>>()?;
            let opts = SweepOptions { n_models: sw.n_models, bucket_width: sw.bucket_width, seed: derive_seed(cfg.seed, STREAM_SWEEP) };
            Some(tree_complexity_sweep(&sets, &space, opts))
        }
        _ => None,
    };

    Ok(ExperimentReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        cells: reports,
        groups: has_groups.then(|| groups.sizes()),
        confusion,
        complexity,
        meta: RunMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            split_seeds,
            preprocessor_fingerprints: fingerprints,
            n_patients: data.episodes.len(),
            n_rows: data.episodes.n_stages(),
            action_labels: data.schema.action_labels.clone(),
            fits_attempted,
            fits_failed,
            bayes_auroc: data.bayes_auroc,
            duration_secs: start.elapsed().as_secs_f64(),
            warnings,
        },
        bundles,
    })
}

/// Runs only the tree-complexity sweep on the first split.
pub fn run_sweep(cfg: &ExperimentConfig, n_models: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    if data.episodes.is_empty() {
        return Err(Error::NoEpisodes);
    }
    let split = prepare_split(&data.episodes, &data.schema, split_seed(cfg.seed, 0), cfg.test_frac, cfg.val_frac)?;
    let sw = cfg.sweep.clone().unwrap_or_default();
    let specs = sw.states.unwrap_or_else(|| cfg.state_specs());
    let sets = specs.iter().map(|s| split.matrices(s)).collect::<Result<Vec<_>>>()?;
    let space = HyperparamSpace::for_profile(cfg.profile);
    let opts = SweepOptions { n_models, bucket_width: sw.bucket_width, seed: derive_seed(cfg.seed, STREAM_SWEEP) };
    Ok(tree_complexity_sweep(&sets, &space, opts))
}

/// File-name-safe form of a state label, e.g. `{H(0),Hbar(sum)}` -> `H_0_Hbar_sum`.
fn sanitize(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn summarize_cell(cfg: &ExperimentConfig, ci: usize, c: &CellWork, groups: Option<&SubgroupAssignment>) -> Result<CellReport> {
    if let Some(reason) = &c.skip {
        return Ok(CellReport::skipped(c.spec, c.model, reason.clone()));
    }
    if c.units.is_empty() {
        let first = c.failures.first().cloned().unwrap_or_default();
        let mut r = CellReport::skipped(c.spec, c.model, format!("all candidates failed: {first}"));
        r.selected = c.selected.clone();
        r.candidate_failures = c.failures.clone();
        return Ok(r);
    }
    let units: Vec<&PatientPreds> = c.units.iter().collect();
    let mut metrics = Vec::new();
    for (mi, (name, metric, switch_only)) in REPORTED_METRICS.iter().enumerate() {
        let split_values: Vec<Option<f64>> = c
            .split_units
            .iter()
            .map(|r| {
                let u: Vec<&PatientPreds> = c.units[r.clone()].iter().collect();
                if u.is_empty() {
                    None
                } else {
                    pooled_metric(&u, *metric, *switch_only)
                }
            })
            .collect();
        let defined: Vec<f64> = split_values.iter().flatten().copied().collect();
        let split_mean = (!defined.is_empty()).then(|| crate::util::mean(&defined));
        let seed = derive_seed(cfg.seed, STREAM_BOOT + (ci * REPORTED_METRICS.len() + mi) as u64);
        let estimate = bootstrap_ci(&units, |u: &[&&PatientPreds]| {
            let flat: Vec<&PatientPreds> = u.iter().map(|x| **x).collect();
            pooled_metric(&flat, *metric, *switch_only)
        }, cfg.bootstrap, cfg.level, seed)
        .ok();
        let n_rows = units.iter().map(|u| if *switch_only { u.switch.iter().filter(|&&s| s).count() } else { u.labels.len() }).sum();
        metrics.push(MetricRow { metric: name.to_string(), estimate, split_values, split_mean, n_rows });
    }

    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut stage_keys = Vec::new();
    let mut group_keys = Vec::new();
    for u in &c.units {
        probs.extend(u.probs.iter().cloned());
        labels.extend(u.labels.iter().copied());
        stage_keys.extend(u.stages.iter().map(|&t| t.checked_sub(1)));
        let g = groups.and_then(|g| g.group_of(&u.patient_id)).map(|g| g - 1);
        group_keys.extend(std::iter::repeat_n(g, u.labels.len()));
    }
    Ok(CellReport {
        state: c.spec.label(),
        spec: c.spec,
        model: c.model,
        skip: None,
        metrics,
        selected: c.selected.clone(),
        candidate_failures: c.failures.clone(),
        by_stage_auroc: Some(series_by_key(&stage_keys, cfg.max_stage, &probs, &labels, Metric::Auroc)),
        by_stage_accuracy: Some(series_by_key(&stage_keys, cfg.max_stage, &probs, &labels, Metric::Accuracy)),
        by_group_auroc: groups.map(|_| series_by_key(&group_keys, N_GROUPS, &probs, &labels, Metric::Auroc)),
        ope: Some(median_product_curve(&c.series, cfg.max_stage)),
    })
}

fn build_confusion(cfg: &ExperimentConfig, specs: &[StateSpec], cells: &[CellWork], labels: &[String]) -> Option<ConfusionReport> {
    let index = |r: CellRef| r.state * cfg.models.len() + cfg.models.iter().position(|&m| m == r.model).unwrap();
    let (a, b) = match cfg.confusion {
        Some(c) => (index(c.reference), index(c.comparison)),
        None => {
            let model = cfg.models[0];
            (index(CellRef { state: specs.len() - 1, model }), index(CellRef { state: 0, model }))
        }
    };
    let (ra, rb) = (&cells[a], &cells[b]);
    // both cells must have scored the same test patients in every split
    if ra.units.is_empty() || ra.split_units != rb.split_units {
        return None;
    }
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    for (ua, ub) in ra.units.iter().zip(&rb.units) {
        for i in 0..ua.labels.len() {
            if ua.switch[i] {
                pa.push(argmax(&ua.probs[i]));
                pb.push(argmax(&ub.probs[i]));
            }
        }
    }
    Some(ConfusionReport {
        reference: format!("{} {}", ra.spec.label(), ra.model.as_str()),
        comparison: format!("{} {}", rb.spec.label(), rb.model.as_str()),
        labels: labels.to_vec(),
        matrix: confusion_matrix(&pa, &pb, labels.len()),
    })
}
