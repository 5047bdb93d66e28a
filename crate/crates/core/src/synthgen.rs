//! Synthetic cohorts drawn from a known behavior policy.
//!
//! Contexts follow an AR(1) process pushed around by the previous action.
//! Actions are sampled from
//! `softmax(Wx·X_t + w_a·onehot(A_{t-1}) + Wagg·sum(Ā_{t-1}) + Wlag·X_{t-1} + b)`,
//! so the true policy factors through `{X_t, A_{t-1}, X_{t-1}, sum-Ā}`.
//! At `t = 1` the history is padded the same way state assembly pads it:
//! `A_0` is the default action and `X_0 = X_1`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CohortSchema, Episode, EpisodeSet, Stage, Value, VariableSpec};
use crate::error::{Error, Result};
use crate::metrics::auroc_multiclass;
use crate::util::{derive_seed, rng, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Fixed(usize),
    Geometric { p: f64, min: usize, max: usize },
}

/// Scales of the ground-truth policy blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyWeights {
    /// Scale of the random K×d matrix on the current context.
    pub current: f64,
    /// Diagonal bonus for repeating the previous action.
    pub persistence: f64,
    /// Scale of the random K×K matrix on past action counts.
    pub aggregate: f64,
    /// Scale of the random K×d matrix on the lag-1 context.
    pub lag: f64,
    /// Scale of the random per-action bias.
    pub bias: f64,
}

impl Default for PolicyWeights {
    fn default() -> Self {
        Self { current: 1.0, persistence: 1.0, aggregate: 0.2, lag: 0.0, bias: 0.0 }
    }
}

impl PolicyWeights {
    pub fn zero() -> Self {
        Self { current: 0.0, persistence: 0.0, aggregate: 0.0, lag: 0.0, bias: 0.0 }
    }

    pub fn scaled(self, f: f64) -> Self {
        Self {
            current: self.current * f,
            persistence: self.persistence * f,
            aggregate: self.aggregate * f,
            lag: self.lag * f,
            bias: self.bias * f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dynamics {
    pub ar: f64,
    pub noise: f64,
    /// Scale of the random K×d drift added after each action.
    pub action_drift: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self { ar: 0.7, noise: 1.0, action_drift: 0.5 }
    }
}

/// Severity = coupling·mean(X_t) + offset + trend_p·t + noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityModel {
    pub coupling: f64,
    pub offset: f64,
    /// Standard deviation of the per-patient linear trend.
    pub trend: f64,
    pub noise: f64,
}

impl Default for SeverityModel {
    fn default() -> Self {
        Self { coupling: 1.0, offset: 5.0, trend: 0.3, noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_actions: usize,
    pub context_dim: usize,
    pub horizon: Horizon,
    #[serde(default)]
    pub policy: PolicyWeights,
    #[serde(default)]
    pub dynamics: Dynamics,
    #[serde(default)]
    pub severity: SeverityModel,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(n_patients: usize, n_actions: usize, context_dim: usize, horizon: Horizon, seed: u64) -> Self {
        Self {
            n_patients,
            n_actions,
            context_dim,
            horizon,
            policy: PolicyWeights::default(),
            dynamics: Dynamics::default(),
            severity: SeverityModel::default(),
            seed,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("generator config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator config: {m}")));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.n_actions < 2 {
            return bad("n_actions must be at least 2");
        }
        if self.context_dim == 0 {
            return bad("context_dim must be positive");
        }
        match self.horizon {
            Horizon::Fixed(0) => return bad("horizon must be at least 1"),
            Horizon::Geometric { p, min, max } if !(p > 0.0 && p <= 1.0) || min == 0 || max < min => {
                return bad("geometric horizon needs 0 < p <= 1 and 1 <= min <= max")
            }
            _ => {}
        }
        let w = &self.policy;
        let d = &self.dynamics;
        let s = &self.severity;
        let all = [
            w.current, w.persistence, w.aggregate, w.lag, w.bias, d.ar, d.noise, d.action_drift, s.coupling,
            s.offset, s.trend, s.noise,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all weights must be finite");
        }
        if d.noise < 0.0 || s.noise < 0.0 || s.trend < 0.0 {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }

    pub fn action_labels(&self) -> Vec<String> {
        (0..self.n_actions).map(|k| format!("a{k}")).collect()
    }

    /// Schema of the generated cohort: numeric `x1..xd`, actions `a0..a{K-1}`, default `a0`.
    pub fn schema(&self) -> CohortSchema {
        let vars = (1..=self.context_dim).map(|j| VariableSpec::numeric(&format!("x{j}"))).collect();
        CohortSchema::new(vars, self.action_labels(), "a0").expect("generated schema is valid")
    }
}

/// Weight matrices drawn once from the config seed.
#[derive(Debug, Clone)]
struct PolicyParams {
    wx: Vec<Vec<f64>>,
    wagg: Vec<Vec<f64>>,
    wlag: Vec<Vec<f64>>,
    bias: Vec<f64>,
    persistence: f64,
    drift: Vec<Vec<f64>>,
}

const STREAM_WEIGHTS: u64 = u64::MAX;

fn gauss<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

fn normal_matrix<R: Rng>(r: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * gauss(r)).collect::<Vec<f64>>())
        .collect()
}

impl PolicyParams {
    fn draw(cfg: &GeneratorConfig) -> Self {
        let mut r = rng(derive_seed(cfg.seed, STREAM_WEIGHTS));
        let (k, d) = (cfg.n_actions, cfg.context_dim);
        let w = cfg.policy;
        // every block is drawn regardless of its scale so that changing one
        // strength leaves the other matrices untouched
        let wx = normal_matrix(&mut r, k, d, w.current);
        let wagg = normal_matrix(&mut r, k, k, w.aggregate);
        let wlag = normal_matrix(&mut r, k, d, w.lag);
        let bias = normal_matrix(&mut r, 1, k, w.bias).remove(0);
        let drift = normal_matrix(&mut r, k, d, cfg.dynamics.action_drift);
        Self { wx, wagg, wlag, bias, persistence: w.persistence, drift }
    }

    fn probabilities(&self, x: &[f64], x_prev: &[f64], a_prev: usize, counts: &[f64]) -> Vec<f64> {
        let dot = |w: &[f64], v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let mut logits: Vec<f64> = (0..self.bias.len())
            .map(|k| {
                let persist = if k == a_prev { self.persistence } else { 0.0 };
                dot(&self.wx[k], x) + persist + dot(&self.wagg[k], counts) + dot(&self.wlag[k], x_prev) + self.bias[k]
            })
            .collect();
        softmax_in_place(&mut logits);
        logits
    }
}

/// True action probabilities per patient and stage.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub patient_ids: Vec<String>,
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl OracleTable {
    pub fn n_rows(&self) -> usize {
        self.probs.iter().map(Vec::len).sum()
    }

    /// Rows in episode order, matching state assembly.
    pub fn flat(&self) -> Vec<Vec<f64>> {
        self.probs.iter().flatten().cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.probs.iter().flatten().next().map_or(0, Vec::len);
        let mut header = vec!["patient_id".to_string(), "t".to_string()];
        header.extend((1..=k).map(|j| format!("p_true_{j}")));
        w.write_record(&header)?;
        for (id, eps) in self.patient_ids.iter().zip(&self.probs) {
            for (t, p) in eps.iter().enumerate() {
                let mut rec = vec![id.clone(), (t + 1).to_string()];
                // shortest round-trip representation keeps the file exact
                rec.extend(p.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub schema: CohortSchema,
    pub episodes: EpisodeSet,
    pub oracle: OracleTable,
}

impl SyntheticCohort {
    /// Writes `episodes.jsonl`, `oracle.csv`, `schema.json` and `generator.json`.
    pub fn write_to(&self, cfg: &GeneratorConfig, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("episodes.jsonl"))?);
        crate::dataset::write_jsonl(f, &self.episodes, &self.schema)?;
        self.oracle.write_csv(std::fs::File::create(dir.join("oracle.csv"))?)?;
        std::fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&self.schema)?)?;
        std::fs::write(dir.join("generator.json"), serde_json::to_string_pretty(cfg)?)?;
        Ok(())
    }
}

fn horizon_for<R: Rng>(h: Horizon, r: &mut R) -> usize {
    match h {
        Horizon::Fixed(t) => t,
        Horizon::Geometric { p, min, max } => {
            let extra = Geometric::new(p).expect("validated p").sample(r) as usize;
            (min + extra).min(max)
        }
    }
}

fn generate_patient(cfg: &GeneratorConfig, params: &PolicyParams, i: usize) -> (Episode, Vec<Vec<f64>>) {
    let mut r = rng(derive_seed(cfg.seed, i as u64));
    let (k, d) = (cfg.n_actions, cfg.context_dim);
    let dy = cfg.dynamics;
    let sv = cfg.severity;
    let horizon = horizon_for(cfg.horizon, &mut r);
    let trend = sv.trend * gauss(&mut r);

    let mut x: Vec<f64> = (0..d).map(|_| dy.noise * gauss(&mut r)).collect();
    let mut x_prev = x.clone();
    let mut a_prev = 0usize;
    let mut counts = vec![0.0; k];
    let mut stages = Vec::with_capacity(horizon);
    let mut probs = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        if t > 1 {
            let next: Vec<f64> =
                (0..d).map(|j| dy.ar * x[j] + params.drift[a_prev][j] + dy.noise * gauss(&mut r)).collect();
            x_prev = std::mem::replace(&mut x, next);
        }
        let p = params.probabilities(&x, &x_prev, a_prev, &counts);
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut action = k - 1;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                action = j;
                break;
            }
        }
        let severity = sv.coupling * crate::util::mean(&x) + sv.offset + trend * t as f64 + sv.noise * gauss(&mut r);
        stages.push(Stage {
            context: x.iter().map(|&v| Some(Value::Num(v))).collect(),
            action,
            severity: Some(severity),
        });
        probs.push(p);
        counts[action] += 1.0;
        a_prev = action;
    }
    let width = cfg.n_patients.to_string().len().max(5);
    (Episode { patient_id: format!("p{:0width$}", i + 1), stages }, probs)
}

/// Draws a cohort and its oracle table; deterministic in `cfg.seed`.
pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let params = PolicyParams::draw(cfg);
    let run = |i: usize| generate_patient(cfg, &params, i);
    #[cfg(feature = "parallel")]
    let pairs: Vec<(Episode, Vec<Vec<f64>>)> = {
        use rayon::prelude::*;
        (0..cfg.n_patients).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Vec<(Episode, Vec<Vec<f64>>)> = (0..cfg.n_patients).map(run).collect();

    let (episodes, probs): (Vec<Episode>, Vec<Vec<Vec<f64>>>) = pairs.into_iter().unzip();
    let patient_ids = episodes.iter().map(|e| e.patient_id.clone()).collect();
    Ok(SyntheticCohort {
        schema: cfg.schema(),
        episodes: EpisodeSet::new(episodes),
        oracle: OracleTable { patient_ids, probs },
    })
}

/// Recomputes the true policy from stored histories.
pub fn oracle_probabilities(cfg: &GeneratorConfig, episodes: &EpisodeSet) -> Result<OracleTable> {
    cfg.validate()?;
    let params = PolicyParams::draw(cfg);
    let mut probs = Vec::with_capacity(episodes.len());
    for ep in &episodes.episodes {
        let mut rows = Vec::with_capacity(ep.len());
        let mut counts = vec![0.0; cfg.n_actions];
        let mut a_prev = 0;
        let mut x_prev: Option<Vec<f64>> = None;
        for st in &ep.stages {
            let x: Vec<f64> = st
                .context
                .iter()
                .map(|v| v.as_ref().and_then(Value::as_num))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Schema(format!("patient '{}': missing synthetic context", ep.patient_id)))?;
            if x.len() != cfg.context_dim || st.action >= cfg.n_actions {
                return Err(Error::Schema(format!("patient '{}' does not match the generator", ep.patient_id)));
            }
            let lag = x_prev.as_deref().unwrap_or(&x);
            rows.push(params.probabilities(&x, lag, a_prev, &counts));
            counts[st.action] += 1.0;
            a_prev = st.action;
            x_prev = Some(x);
        }
        probs.push(rows);
    }
    Ok(OracleTable { patient_ids: episodes.episodes.iter().map(|e| e.patient_id.clone()).collect(), probs })
}

/// AUROC of the true probabilities against the sampled actions.
pub fn bayes_auroc(oracle: &OracleTable, episodes: &EpisodeSet) -> Result<f64> {
    let labels: Vec<usize> = episodes.episodes.iter().flat_map(|e| e.stages.iter().map(|s| s.action)).collect();
    auroc_multiclass(&oracle.flat(), &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig::new(n, 4, 3, Horizon::Fixed(10), seed)
    }

    #[test]
    fn persistent_policy_repeats_actions() {
        let mut cfg = base(1000, 1);
        cfg.policy = PolicyWeights { persistence: 5.0, ..PolicyWeights::zero() };
        let c = generate_cohort(&cfg).unwrap();
        let (mut rep, mut n) = (0, 0);
        for ep in &c.episodes.episodes {
            for w in ep.stages.windows(2) {
                rep += usize::from(w[0].action == w[1].action);
                n += 1;
            }
        }
        assert!(n >= 9000);
        let rate = rep as f64 / n as f64;
        // oracle: e^5 / (e^5 + 3)
        let expected = 5f64.exp() / (5f64.exp() + 3.0);
        assert!(rate > 0.8 && (rate - expected).abs() < 0.02, "{rate} vs {expected}");
    }

    #[test]
    fn zero_policy_is_uniform() {
        let mut cfg = base(1000, 2);
        cfg.policy = PolicyWeights::zero();
        let c = generate_cohort(&cfg).unwrap();
        let mut counts = [0usize; 4];
        c.episodes.episodes.iter().flat_map(|e| &e.stages).for_each(|s| counts[s.action] += 1);
        let n: usize = counts.iter().sum();
        assert_eq!(n, 10_000);
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let cfg = GeneratorConfig { horizon: Horizon::Geometric { p: 0.2, min: 2, max: 12 }, ..base(50, 3) };
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.oracle, b.oracle);
        let c = generate_cohort(&GeneratorConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.episodes, c.episodes);
        assert!(a.episodes.episodes.iter().all(|e| (2..=12).contains(&e.len())));
    }

    #[test]
    fn oracle_recomputation_is_bit_exact_after_round_trip() {
        let mut cfg = base(40, 5);
        cfg.policy.lag = 0.7;
        let c = generate_cohort(&cfg).unwrap();
        let mut buf = Vec::new();
        crate::dataset::write_jsonl(&mut buf, &c.episodes, &c.schema).unwrap();
        let back = crate::dataset::parse_jsonl(std::str::from_utf8(&buf).unwrap(), &c.schema).unwrap();
        assert_eq!(back, c.episodes);
        assert_eq!(oracle_probabilities(&cfg, &back).unwrap(), c.oracle);
    }

    #[test]
    fn generated_episodes_pass_dataset_invariants() {
        let c = generate_cohort(&base(30, 6)).unwrap();
        c.episodes.validate(&c.schema).unwrap();
        for p in c.oracle.probs.iter().flatten() {
            assert!(p.iter().all(|&v| v > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_deterministic_policy_has_oracle_auroc_near_one() {
        let mut cfg = base(300, 7);
        cfg.policy = cfg.policy.scaled(100.0);
        let c = generate_cohort(&cfg).unwrap();
        assert!(bayes_auroc(&c.oracle, &c.episodes).unwrap() > 0.99);
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = base(10, 8);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<GeneratorConfig>(&text).unwrap(), cfg);
        let minimal: GeneratorConfig =
            serde_json::from_str(r#"{"n_patients":5,"n_actions":3,"context_dim":2,"horizon":{"fixed":4}}"#).unwrap();
        minimal.validate().unwrap();
        let bad = GeneratorConfig { n_actions: 1, ..cfg.clone() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut nan = cfg;
        nan.policy.current = f64::NAN;
        assert!(generate_cohort(&nan).is_err());
    }
}
