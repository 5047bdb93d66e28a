//! Browser bindings: a synthetic cohort is drawn in the page, several state
//! representations are fitted with logistic regression, and the results come
//! back as JSON with ready-made SVG charts.
//!
//! Every exported function takes and returns a JSON string. The `*_json`
//! functions are the same operations without the wasm wrapper so they can be
//! tested natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use histpolicy::metrics::Metric;
use histpolicy::models::{fit_model, DatasetProfile, HyperparamSpace, ModelConfig, PolicyModel};
use histpolicy::ope::{curves_svg, inverse_probability_products, median_product_curve};
use histpolicy::runner::{prepare_split, split_seed, PreparedSplit};
use histpolicy::staterep::{AggOp, StateSpec};
use histpolicy::strata::{filter_switch_states, series_by_stage, tree_complexity_sweep, SplitMatrices, SweepOptions};
use histpolicy::svg::LineChart;
use histpolicy::synthgen::{generate_cohort, GeneratorConfig, Horizon, PolicyWeights, SyntheticCohort};

const MAX_PATIENTS: usize = 5000;
const MAX_TREES: usize = 500;

/// Cohort knobs exposed in the page.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct CohortParams {
    pub n_patients: usize,
    pub n_actions: usize,
    pub stages: usize,
    pub persistence: f64,
    pub current: f64,
    pub aggregate: f64,
    pub seed: u64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self { n_patients: 600, n_actions: 4, stages: 10, persistence: 3.0, current: 0.5, aggregate: 0.3, seed: 1 }
    }
}

impl CohortParams {
    fn generator(&self) -> Result<GeneratorConfig, String> {
        if self.n_patients > MAX_PATIENTS {
            return Err(format!("at most {MAX_PATIENTS} patients in the browser"));
        }
        let mut g = GeneratorConfig::new(self.n_patients, self.n_actions, 3, Horizon::Fixed(self.stages), self.seed);
        g.policy = PolicyWeights { current: self.current, persistence: self.persistence, aggregate: self.aggregate, lag: 0.0, bias: 0.0 };
        g.dynamics.action_drift = 0.2;
        g.validate().map_err(|e| e.to_string())?;
        Ok(g)
    }
}

struct Prepared {
    cohort: SyntheticCohort,
    split: PreparedSplit,
}

fn prepare(p: &CohortParams) -> Result<Prepared, String> {
    let cohort = generate_cohort(&p.generator()?).map_err(|e| e.to_string())?;
    let split = prepare_split(&cohort.episodes, &cohort.schema, split_seed(p.seed, 0), 0.2, 0.2).map_err(|e| e.to_string())?;
    Ok(Prepared { cohort, split })
}

impl Prepared {
    fn fit_lr(&self, spec: &StateSpec) -> Result<(PolicyModel, SplitMatrices), String> {
        let mats = self.split.matrices(spec).map_err(|e| e.to_string())?;
        let model = fit_model(&ModelConfig::Lr { c: 1.0, max_iter: 500 }, &mats.train, &mats.val, 0).map_err(|e| e.to_string())?;
        Ok((model, mats))
    }

    fn oracle_test_probs(&self) -> Vec<Vec<f64>> {
        self.split.indices.test.iter().flat_map(|&i| self.cohort.oracle.probs[i].iter().cloned()).collect()
    }
}

fn compared_specs() -> Vec<StateSpec> {
    vec![StateSpec::current_only(), StateSpec::prev_action_only(), StateSpec::window(0, AggOp::None), StateSpec::window(0, AggOp::Sum)]
}

#[derive(Debug, Serialize)]
pub struct StateRow {
    pub state: String,
    pub test_auroc: Option<f64>,
    pub test_auroc_switch: Option<f64>,
    pub ope_median_last: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub oracle_auroc: Option<f64>,
    pub n_test_rows: usize,
    pub states: Vec<StateRow>,
    pub stage_svg: String,
    pub ope_svg: String,
}

fn stage_points(values: &[Option<f64>]) -> Vec<(f64, f64)> {
    values.iter().enumerate().filter_map(|(t, v)| v.map(|a| ((t + 1) as f64, a))).collect()
}

/// Fits each standard representation and compares test AUROC, per-stage
/// AUROC and median inverse-probability products.
pub fn compare_states_json(input: &str) -> Result<String, String> {
    let params: CohortParams = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let prep = prepare(&params)?;
    let mut stage_chart = LineChart::new("Test AUROC by stage", "stage t", "AUROC");
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut n_test_rows = 0;
    let mut oracle_auroc = None;
    for spec in compared_specs() {
        let (model, mats) = prep.fit_lr(&spec)?;
        let probs = model.predict_matrix(&mats.test).map_err(|e| e.to_string())?;
        let auroc = Metric::Auroc.compute(&probs, &mats.test.labels).ok();
        let switch = filter_switch_states(&mats.test);
        let switch_auroc = model.predict_matrix(&switch).ok().and_then(|p| Metric::Auroc.compute(&p, &switch.labels).ok());
        stage_chart.add(&spec.label(), stage_points(&series_by_stage(&mats.test, &probs, Metric::Auroc, params.stages).values));
        if oracle_auroc.is_none() {
            let oracle = prep.oracle_test_probs();
            oracle_auroc = Metric::Auroc.compute(&oracle, &mats.test.labels).ok();
            stage_chart.add("oracle", stage_points(&series_by_stage(&mats.test, &oracle, Metric::Auroc, params.stages).values));
            n_test_rows = mats.test.n_rows();
        }
        let series = inverse_probability_products(&prep.split.test, &model, &spec).map_err(|e| e.to_string())?;
        let curve = median_product_curve(&series, params.stages);
        rows.push(StateRow { state: spec.label(), test_auroc: auroc, test_auroc_switch: switch_auroc, ope_median_last: curve.medians.last().copied() });
        curves.push((spec.label(), curve));
    }
    let refs: Vec<(String, &_)> = curves.iter().map(|(n, c)| (n.clone(), c)).collect();
    let out = Comparison { oracle_auroc, n_test_rows, states: rows, stage_svg: stage_chart.render(), ope_svg: curves_svg(&refs) };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    #[serde(flatten)]
    pub cohort: CohortParams,
    pub n_models: usize,
    /// `"prev_action"` or `"history"`.
    pub state: String,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self { cohort: CohortParams::default(), n_models: 100, state: "prev_action".into() }
    }
}

#[derive(Debug, Serialize)]
pub struct SweepOutput {
    pub state: String,
    pub max_leaves: usize,
    pub points: Vec<histpolicy::strata::ComplexityPoint>,
    pub svg: String,
}

/// Random CART trees bucketed by leaf count; the best tree per bucket is reported.
pub fn tree_complexity_json(input: &str) -> Result<String, String> {
    let params: SweepParams = serde_json::from_str(input).map_err(|e| e.to_string())?;
    if params.n_models == 0 || params.n_models > MAX_TREES {
        return Err(format!("n_models must be in 1..={MAX_TREES}"));
    }
    let spec = match params.state.as_str() {
        "prev_action" => StateSpec::prev_action_only(),
        "history" => StateSpec::window(0, AggOp::Sum),
        other => return Err(format!("unknown state '{other}'")),
    };
    let prep = prepare(&params.cohort)?;
    let mats = prep.split.matrices(&spec).map_err(|e| e.to_string())?;
    let space = HyperparamSpace::for_profile(DatasetProfile::Ra);
    let sweep = tree_complexity_sweep(&[mats], &space, SweepOptions { n_models: params.n_models, bucket_width: 1, seed: params.cohort.seed });
    let mut chart = LineChart::new("Best tree per leaf count", "number of leaves", "test AUROC");
    chart.add(&spec.label(), sweep.points.iter().filter_map(|p| p.test_auroc.map(|a| (p.best_leaves as f64, a))).collect());
    let max_leaves = sweep.leaf_counts.values().flatten().copied().max().unwrap_or(0);
    let out = SweepOutput { state: spec.label(), max_leaves, points: sweep.points, svg: chart.render() };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    #[serde(flatten)]
    pub cohort: CohortParams,
    /// Index into the test patients.
    pub patient: usize,
}

#[derive(Debug, Serialize)]
pub struct TraceStage {
    pub stage: usize,
    pub action: String,
    pub oracle: f64,
    pub prev_action_model: f64,
    pub history_model: f64,
    pub prev_action_product: f64,
    pub history_product: f64,
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub patient_id: String,
    pub n_test_patients: usize,
    pub stages: Vec<TraceStage>,
}

/// One test patient's actions with the probability each model gave them and
/// the running inverse-probability products.
pub fn patient_trace_json(input: &str) -> Result<String, String> {
    let params: TraceParams = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let prep = prepare(&params.cohort)?;
    let n_test = prep.split.indices.test.len();
    if params.patient >= n_test {
        return Err(format!("patient index must be below {n_test}"));
    }
    let coarse = StateSpec::prev_action_only();
    let rich = StateSpec::window(0, AggOp::Sum);
    let (m_coarse, mats_coarse) = prep.fit_lr(&coarse)?;
    let (m_rich, mats_rich) = prep.fit_lr(&rich)?;
    let rows: Vec<usize> = (0..mats_coarse.test.n_rows()).filter(|&i| mats_coarse.test.patient[i] == params.patient).collect();
    let s_coarse = inverse_probability_products(&prep.split.test, &m_coarse, &coarse).map_err(|e| e.to_string())?;
    let s_rich = inverse_probability_products(&prep.split.test, &m_rich, &rich).map_err(|e| e.to_string())?;
    let oracle = &prep.cohort.oracle.probs[prep.split.indices.test[params.patient]];
    let labels = &mats_coarse.test.action_labels;
    let stages = rows
        .iter()
        .enumerate()
        .map(|(t, &i)| {
            let a = mats_coarse.test.labels[i];
            TraceStage {
                stage: t + 1,
                action: labels[a].clone(),
                oracle: oracle[t][a],
                prev_action_model: m_coarse.predict_row(mats_coarse.test.row(i))[a],
                history_model: m_rich.predict_row(mats_rich.test.row(i))[a],
                prev_action_product: s_coarse[params.patient].products[t],
                history_product: s_rich[params.patient].products[t],
            }
        })
        .collect();
    let out = Trace { patient_id: mats_coarse.test.patient_ids[params.patient].clone(), n_test_patients: n_test, stages };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn compare_states(input: &str) -> Result<String, JsError> {
    compare_states_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tree_complexity(input: &str) -> Result<String, JsError> {
    tree_complexity_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn patient_trace(input: &str) -> Result<String, JsError> {
    patient_trace_json(input).map_err(|e| JsError::new(&e))
}
